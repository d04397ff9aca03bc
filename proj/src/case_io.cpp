#include "slpt/case_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "slpt/errors.hpp"

namespace slpt {

static_assert(std::endian::native == std::endian::little, "case files are written in native little-endian order");

namespace {
constexpr char kMagic[8] = {'S', 'L', 'P', 'T', 'C', 'A', 'S', 'E'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw InvalidArgument("truncated case file");
    return v;
}
} // namespace

void write_case_file(const std::filesystem::path& file, const Case& c) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write " + file.string());
    out.write(kMagic, sizeof kMagic);
    put(out, kVersion);
    put(out, static_cast<std::uint32_t>(c.image.size(0)));
    put(out, static_cast<std::uint32_t>(c.image.size(1)));
    put(out, static_cast<std::uint32_t>(c.image.size(2)));
    out.write(reinterpret_cast<const char*>(c.image.data()), static_cast<std::streamsize>(c.image.numel() * sizeof(double)));
    for (int v : c.mask.labels) put(out, static_cast<std::int32_t>(v));
}

Case read_case_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InvalidArgument("cannot read " + file.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw InvalidArgument(file.string() + ": not a case file");
    if (get<std::uint32_t>(in) != kVersion) throw InvalidArgument(file.string() + ": unsupported case file version");
    const auto C = static_cast<int>(get<std::uint32_t>(in));
    const auto H = static_cast<int>(get<std::uint32_t>(in));
    const auto W = static_cast<int>(get<std::uint32_t>(in));
    Case c;
    c.image = Tensor({C, H, W});
    in.read(reinterpret_cast<char*>(c.image.data()), static_cast<std::streamsize>(c.image.numel() * sizeof(double)));
    c.mask = Mask(H, W);
    for (int& v : c.mask.labels) v = get<std::int32_t>(in);
    return c;
}

void save_pool(const std::filesystem::path& dir, const Pool& pool, const LesionProfile& profile) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "cases");
    nlohmann::json manifest;
    manifest["format"] = "slpt-cases";
    manifest["version"] = kVersion;
    manifest["num_classes"] = pool.num_classes();
    nlohmann::json table = nlohmann::json::array();
    table.push_back({{"label", 0}, {"name", "background"}, {"frequency", nullptr}});
    for (std::size_t i = 0; i < profile.classes.size(); ++i)
        table.push_back({{"label", i + 1}, {"name", profile.classes[i].name}, {"frequency", profile.classes[i].frequency}});
    manifest["class_table"] = table;
    nlohmann::json list = nlohmann::json::array();
    const auto& cases = pool.cases_for_export();
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const Case& c = cases[i];
        const std::string rel = "cases/" + c.case_id + ".case";
        write_case_file(dir / rel, c);
        list.push_back({{"case_id", c.case_id},
                        {"seed", c.seed},
                        {"file", rel},
                        {"labeled", pool.is_labeled(i)},
                        {"lesion_classes", c.lesion_classes}});
    }
    manifest["cases"] = list;
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Pool load_pool(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw InvalidArgument("missing manifest.json in " + dir.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("malformed manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "slpt-cases") throw InvalidArgument("manifest format tag is not slpt-cases");
    std::vector<Case> cases;
    std::vector<int> labeled;
    for (const auto& entry : manifest.at("cases")) {
        Case c = read_case_file(dir / entry.at("file").get<std::string>());
        c.case_id = entry.at("case_id").get<std::string>();
        c.seed = entry.at("seed").get<std::uint64_t>();
        c.lesion_classes = entry.value("lesion_classes", std::vector<int>{});
        if (entry.value("labeled", false)) labeled.push_back(static_cast<int>(cases.size()));
        cases.push_back(std::move(c));
    }
    Pool pool(std::move(cases), manifest.at("num_classes").get<int>());
    pool.mark_labeled(labeled);
    return pool;
}

} // namespace slpt
