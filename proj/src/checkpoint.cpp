#include "slpt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "slpt/errors.hpp"

namespace slpt {

static_assert(std::endian::native == std::endian::little, "checkpoints are written in native little-endian order");

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'L', 'P', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct Entry {
    std::string name;
    const Tensor* value;
};

std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << v;
    return s.str();
}

void write_file(const std::filesystem::path& file, json header, const std::vector<Entry>& tensors) {
    json table = json::array();
    for (const Entry& e : tensors) table.push_back({{"name", e.name}, {"shape", e.value->shape()}});
    header["tensors"] = table;
    const std::string text = header.dump();
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary);
    if (!out) throw InvalidArgument("cannot write " + file.string());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof kVersion);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (const Entry& e : tensors)
        out.write(reinterpret_cast<const char*>(e.value->data()), static_cast<std::streamsize>(e.value->numel() * sizeof(double)));
    if (!out) throw InvalidArgument("failed writing " + file.string());
}

struct Loaded {
    json header;
    std::map<std::string, Tensor> tensors;
};

Loaded read_file(const std::filesystem::path& file, const std::string& kind) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw InvalidArgument("cannot read " + file.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw InvalidArgument(file.string() + ": not a checkpoint");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (!in || version != kVersion) throw InvalidArgument(file.string() + ": unsupported checkpoint version");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw InvalidArgument(file.string() + ": truncated header");
    Loaded out;
    out.header = json::parse(text);
    if (out.header.value("kind", "") != kind)
        throw InvalidArgument(file.string() + ": expected a " + kind + " checkpoint, found '" + out.header.value("kind", "") + "'");
    for (const json& t : out.header.at("tensors")) {
        Tensor v(t.at("shape").get<Shape>());
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.numel() * sizeof(double)));
        if (!in) throw InvalidArgument(file.string() + ": truncated tensor data");
        out.tensors.emplace(t.at("name").get<std::string>(), std::move(v));
    }
    return out;
}

void assign(Parameter& p, const std::map<std::string, Tensor>& tensors, const std::string& file) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw InvalidArgument(file + ": missing tensor " + p.name);
    if (it->second.shape() != p.value.shape())
        throw InvalidArgument(file + ": tensor " + p.name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                              shape_str(p.value.shape()));
    p.value = it->second;
}

json config_json(const BackboneConfig& c) {
    return {{"num_scales", c.num_scales},
            {"base_channels", c.base_channels},
            {"input_channels", c.input_channels},
            {"num_classes_pretrain", c.num_classes_pretrain},
            {"height", c.input_size.height},
            {"width", c.input_size.width}};
}

BackboneConfig config_from(const json& j) {
    BackboneConfig c;
    c.num_scales = j.at("num_scales");
    c.base_channels = j.at("base_channels");
    c.input_channels = j.at("input_channels");
    c.num_classes_pretrain = j.at("num_classes_pretrain");
    c.input_size = {j.at("height").get<int>(), j.at("width").get<int>()};
    return c;
}

json report_json(const PretrainReport& r) {
    return {{"epochs", r.epochs},         {"train_cases", r.train_cases}, {"holdout_cases", r.holdout_cases},
            {"final_loss", r.final_loss}, {"holdout_dice", r.holdout_dice}, {"epoch_loss", r.epoch_loss}};
}

PretrainReport report_from(const json& j) {
    PretrainReport r;
    r.epochs = j.at("epochs");
    r.train_cases = j.at("train_cases");
    r.holdout_cases = j.at("holdout_cases");
    r.final_loss = j.at("final_loss");
    r.holdout_dice = j.at("holdout_dice");
    r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    return r;
}

void write_backbone(const std::filesystem::path& file, const Backbone& net, const PretrainReport& report, bool frozen) {
    std::vector<Entry> entries;
    for (const Parameter* p : net.all_parameters()) entries.push_back({p->name, &p->value});
    json header = {{"kind", "backbone"}, {"frozen", frozen}, {"config", config_json(net.config())}, {"report", report_json(report)}};
    write_file(file, std::move(header), entries);
}

std::pair<Backbone, PretrainReport> read_backbone(const std::filesystem::path& file, bool& frozen) {
    Loaded l = read_file(file, "backbone");
    frozen = l.header.at("frozen");
    Backbone net(config_from(l.header.at("config")), 0);
    for (Parameter* p : net.all_parameters()) assign(*p, l.tensors, file.string());
    return {std::move(net), report_from(l.header.at("report"))};
}

json prompt_config_json(const PromptConfig& c) {
    return {{"num_prompts", c.num_prompts},         {"num_classes", c.num_classes},
            {"dilations", c.dilations},             {"fpu_reduction", c.fpu_reduction},
            {"se_reduction", c.se_reduction},       {"prompt_groups", c.prompt_groups},
            {"adapter_groups", c.adapter_groups},   {"fusion_init_gain", c.fusion_init_gain},
            {"generator_noise", c.generator_noise}};
}

PromptConfig prompt_config_from(const json& j) {
    PromptConfig c;
    c.num_prompts = j.at("num_prompts");
    c.num_classes = j.at("num_classes");
    c.dilations = j.at("dilations").get<std::vector<int>>();
    c.fpu_reduction = j.at("fpu_reduction");
    c.se_reduction = j.at("se_reduction");
    c.prompt_groups = j.at("prompt_groups");
    c.adapter_groups = j.at("adapter_groups");
    c.fusion_init_gain = j.at("fusion_init_gain");
    c.generator_noise = j.at("generator_noise");
    return c;
}

} // namespace

void save_backbone(const std::filesystem::path& file, const FrozenBackbone& backbone) {
    write_backbone(file, backbone.net(), backbone.report(), true);
}

void save_backbone(const std::filesystem::path& file, const Backbone& backbone, const PretrainReport& report) {
    write_backbone(file, backbone, report, false);
}

FrozenBackbone load_frozen_backbone(const std::filesystem::path& file) {
    bool frozen = false;
    auto [net, report] = read_backbone(file, frozen);
    return FrozenBackbone(std::move(net), std::move(report));
}

Backbone load_trainable_backbone(const std::filesystem::path& file, bool override_freeze) {
    bool frozen = false;
    auto [net, report] = read_backbone(file, frozen);
    if (frozen && !override_freeze)
        throw FrozenParameterError(file.string() + ": backbone checkpoint is frozen; pass the override flag to train it");
    net.unfreeze();
    return std::move(net);
}

void save_prompted(const std::filesystem::path& file, const PromptedModel& model) {
    std::vector<Entry> entries;
    for (const Parameter* p : model.tunable()) entries.push_back({p->name, &p->value});
    const auto& gens = model.prompts().generators;
    for (std::size_t k = 0; k < gens.size(); ++k) entries.push_back({"prompt.noise" + std::to_string(k), &gens[k].noise});
    json header = {{"kind", "prompted"},
                   {"backbone_hash", hex(model.backbone().weights_hash())},
                   {"num_prompts", model.num_prompts()},
                   {"num_classes", model.num_classes()},
                   {"prompt_config", prompt_config_json(model.config())}};
    write_file(file, std::move(header), entries);
}

void load_prompted(const std::filesystem::path& file, PromptedModel& model) {
    Loaded l = read_file(file, "prompted");
    const std::string expected = hex(model.backbone().weights_hash());
    if (l.header.at("backbone_hash").get<std::string>() != expected)
        throw InvalidArgument(file.string() + ": tuned against backbone " + l.header.at("backbone_hash").get<std::string>() +
                              ", model has " + expected);
    if (l.header.at("num_prompts").get<int>() != model.num_prompts() || l.header.at("num_classes").get<int>() != model.num_classes())
        throw InvalidArgument(file.string() + ": prompt count or class count differs from the model");
    for (Parameter* p : model.tunable()) assign(*p, l.tensors, file.string());
    auto& gens = model.prompts().generators;
    for (std::size_t k = 0; k < gens.size(); ++k) {
        Parameter tmp{"prompt.noise" + std::to_string(k), gens[k].noise, false};
        assign(tmp, l.tensors, file.string());
        gens[k].noise = std::move(tmp.value);
    }
}

PromptedModel load_prompted_model(const std::filesystem::path& file, std::shared_ptr<const FrozenBackbone> backbone) {
    if (!backbone) throw InvalidArgument("load_prompted_model: null backbone");
    const PromptConfig pc = prompt_config_from(read_file(file, "prompted").header.at("prompt_config"));
    const ImageSize in = backbone->config().input_size;
    const Tensor prior({1, in.height / 2, in.width / 2}, 0.5);
    PromptedModel model(std::move(backbone), init_prompt_set(prior, pc.num_prompts, 0, pc.generator_noise), pc, 0);
    load_prompted(file, model);
    return model;
}

} // namespace slpt
