#include "slpt/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "slpt/components.hpp"
#include "slpt/errors.hpp"
#include "slpt/rng.hpp"

namespace slpt {
namespace {

constexpr std::uint64_t kPretrainTag = 0x5052455452414eULL;   // "PRETRAN"
constexpr std::uint64_t kDownstreamTag = 0x444f574e53ULL;     // "DOWNS"

struct Appearance {
    double background, background_texture;
    double organ, organ_texture;
    double texture_sigma;
    double noise;
};

// The downstream appearance is a shifted distribution relative to pretraining.
constexpr Appearance kPretrainLook{0.12, 0.04, 0.55, 0.05, 6.0, 0.02};
constexpr Appearance kDownstreamLook{0.18, 0.06, 0.62, 0.07, 3.0, 0.04};

void gaussian_blur_1d(std::vector<double>& data, int height, int width, double sigma, bool along_x) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double ks = 0.0;
    for (int i = -radius; i <= radius; ++i) ks += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= ks;
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return i;
    };
    std::vector<double> out(data.size());
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                const int yy = along_x ? y : reflect(y + i, height);
                const int xx = along_x ? reflect(x + i, width) : x;
                acc += k[i + radius] * data[static_cast<std::size_t>(yy) * width + xx];
            }
            out[static_cast<std::size_t>(y) * width + x] = acc;
        }
    data.swap(out);
}

// City-block distance from each foreground pixel to the nearest background pixel.
std::vector<int> interior_depth(const std::vector<std::uint8_t>& fg, int H, int W) {
    const int inf = H + W;
    std::vector<int> d(fg.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            int& v = d[y * W + x];
            if (!fg[y * W + x]) {
                v = 0;
                continue;
            }
            v = inf;
            v = std::min(v, y > 0 ? d[(y - 1) * W + x] + 1 : 1);
            v = std::min(v, x > 0 ? d[y * W + x - 1] + 1 : 1);
        }
    for (int y = H - 1; y >= 0; --y)
        for (int x = W - 1; x >= 0; --x) {
            int& v = d[y * W + x];
            if (!v) continue;
            v = std::min(v, y < H - 1 ? d[(y + 1) * W + x] + 1 : 1);
            v = std::min(v, x < W - 1 ? d[y * W + x + 1] + 1 : 1);
        }
    return d;
}

// Thresholds a noisy elliptical field at the quantile that yields the target
// area, then keeps the component containing the field maximum.
std::vector<std::uint8_t> organ_blob(int H, int W, Rng& rng, double target_lo, double target_hi, double accept_lo,
                                     double accept_hi) {
    const std::size_t n = static_cast<std::size_t>(H) * W;
    std::vector<std::uint8_t> best;
    for (int attempt = 0; attempt < 40; ++attempt) {
        const double cy = uniform(rng, 0.38, 0.62) * H, cx = uniform(rng, 0.38, 0.62) * W;
        const double ry = uniform(rng, 0.22, 0.36) * H, rx = uniform(rng, 0.22, 0.36) * W;
        const double th = uniform(rng, 0.0, std::numbers::pi);
        const double target = uniform(rng, target_lo, target_hi);
        const Tensor noise = smooth_field(H, W, H / 8.0, rng());
        std::vector<double> field(n);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double u = dy * std::cos(th) - dx * std::sin(th);
                const double v = dy * std::sin(th) + dx * std::cos(th);
                field[y * W + x] = 1.0 - (u * u) / (ry * ry) - (v * v) / (rx * rx) + 0.35 * noise.at(y, x);
            }
        std::vector<double> sorted = field;
        const std::size_t kth = static_cast<std::size_t>((1.0 - target) * static_cast<double>(n));
        std::nth_element(sorted.begin(), sorted.begin() + kth, sorted.end());
        const double thr = sorted[kth];
        std::vector<std::uint8_t> fg(n);
        for (std::size_t i = 0; i < n; ++i) fg[i] = field[i] > thr;
        const auto peak = static_cast<int>(std::max_element(field.begin(), field.end()) - field.begin());
        std::vector<std::uint8_t> blob(n, 0);
        for (const auto& comp : connected_components(fg, H, W))
            if (std::find(comp.begin(), comp.end(), peak) != comp.end())
                for (int p : comp) blob[p] = 1;
        const double frac = static_cast<double>(std::count(blob.begin(), blob.end(), 1)) / static_cast<double>(n);
        if (frac >= accept_lo && frac <= accept_hi) return blob;
        if (best.empty()) best = blob;
    }
    return best;
}

Tensor render(const std::vector<std::uint8_t>& organ, int H, int W, const Appearance& look, Rng& rng) {
    const Tensor bg_tex = smooth_field(H, W, look.texture_sigma * 1.5, rng());
    const Tensor org_tex = smooth_field(H, W, look.texture_sigma, rng());
    Tensor image({1, H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            image.at(0, y, x) = organ[y * W + x] ? look.organ + look.organ_texture * org_tex.at(y, x)
                                                 : look.background + look.background_texture * bg_tex.at(y, x);
    return image;
}

void add_noise_and_clamp(Tensor& image, double sigma, Rng& rng) {
    for (double& v : image.storage()) v = std::clamp(v + normal(rng, 0.0, sigma), 0.0, 1.0);
}

void check_size(ImageSize size) {
    if (size.height < 32 || size.width < 32)
        throw InvalidArgument("image size must be at least 32x32, got " + std::to_string(size.height) + "x" +
                              std::to_string(size.width));
}

} // namespace

LesionProfile LesionProfile::default_profile() {
    return LesionProfile{{
        {"hypodense", 0.45, 0.06, 0.12, -0.25},
        {"hyperdense", 0.45, 0.05, 0.10, 0.22},
        {"subtle", 0.10, 0.04, 0.07, -0.13},
    }};
}

void LesionProfile::validate() const {
    if (classes.size() < 2) throw InvalidArgument("lesion profile needs at least two lesion classes");
    double total = 0.0;
    for (const LesionClass& c : classes) {
        if (!(c.frequency >= 0.0)) throw InvalidArgument("lesion class '" + c.name + "' has negative frequency");
        if (!(c.radius_min > 0.0 && c.radius_max >= c.radius_min))
            throw InvalidArgument("lesion class '" + c.name + "' has an invalid radius range");
        total += c.frequency;
    }
    if (std::abs(total - 1.0) > 1e-6) throw InvalidArgument("lesion class frequencies must sum to 1");
}

Tensor smooth_field(int height, int width, double sigma, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> data(static_cast<std::size_t>(height) * width);
    for (double& v : data) v = normal(rng);
    gaussian_blur_1d(data, height, width, sigma, true);
    gaussian_blur_1d(data, height, width, sigma, false);
    double mean = 0.0, sq = 0.0;
    for (double v : data) mean += v;
    mean /= static_cast<double>(data.size());
    for (double v : data) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(data.size()));
    for (double& v : data) v = sd > 0 ? (v - mean) / sd : 0.0;
    return Tensor({height, width}, std::move(data));
}

Case gen_pretrain_case(std::uint64_t seed, ImageSize size) {
    check_size(size);
    const int H = size.height, W = size.width;
    Rng rng(derive_seed(seed, kPretrainTag));
    const auto organ = organ_blob(H, W, rng, 0.15, 0.35, 0.10, 0.40);
    Case c;
    c.seed = seed;
    c.case_id = "organ_" + std::to_string(seed);
    c.image = render(organ, H, W, kPretrainLook, rng);
    add_noise_and_clamp(c.image, kPretrainLook.noise, rng);
    c.mask = Mask(H, W);
    for (std::size_t i = 0; i < organ.size(); ++i) c.mask.labels[i] = organ[i];
    return c;
}

Case gen_downstream_case(std::uint64_t seed, ImageSize size, const LesionProfile& profile) {
    check_size(size);
    profile.validate();
    const int H = size.height, W = size.width;
    Rng rng(derive_seed(seed, kDownstreamTag));
    const auto organ = organ_blob(H, W, rng, 0.22, 0.38, 0.15, 0.45);
    Case c;
    c.seed = seed;
    c.case_id = "case_" + std::to_string(seed);
    c.image = render(organ, H, W, kDownstreamLook, rng);
    c.mask = Mask(H, W);

    std::vector<double> freqs;
    for (const LesionClass& lc : profile.classes) freqs.push_back(lc.frequency);
    std::discrete_distribution<int> pick_class(freqs.begin(), freqs.end());
    const std::vector<int> depth = interior_depth(organ, H, W);

    const int n_lesions = uniform_int(rng, 0, 4);
    for (int l = 0; l < n_lesions; ++l) {
        const int cls = pick_class(rng) + 1;
        const LesionClass& spec = profile.classes[cls - 1];
        const double r = std::max(1.5, uniform(rng, spec.radius_min, spec.radius_max) * H);
        std::vector<int> candidates;
        int deepest = 0;
        for (int d : depth) deepest = std::max(deepest, d);
        const int need = std::min(deepest, std::max(1, static_cast<int>(std::lround(0.6 * r))));
        for (int p = 0; p < H * W; ++p)
            if (depth[p] >= need) candidates.push_back(p);
        const int center = candidates[uniform_int(rng, 0, static_cast<int>(candidates.size()) - 1)];
        const int cy = center / W, cx = center % W;
        const Tensor wobble = smooth_field(H, W, std::max(1.0, r / 2.0), rng());
        const Tensor tex = smooth_field(H, W, 2.0, rng());
        std::vector<std::uint8_t> fg(static_cast<std::size_t>(H) * W, 0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                const double f = 1.0 - d2 / (r * r) + 0.25 * wobble.at(y, x);
                fg[y * W + x] = organ[y * W + x] && f > 0.0;
            }
        fg[center] = 1;
        for (const auto& comp : connected_components(fg, H, W)) {
            if (std::find(comp.begin(), comp.end(), center) == comp.end()) continue;
            for (int p : comp) {
                c.mask.labels[p] = cls;
                c.image[p] = c.image[p] + spec.contrast * (1.0 + 0.15 * tex[p]);
            }
        }
        c.lesion_classes.push_back(cls);
    }
    add_noise_and_clamp(c.image, kDownstreamLook.noise, rng);
    return c;
}

Mask downstream_organ(std::uint64_t seed, ImageSize size) {
    check_size(size);
    Rng rng(derive_seed(seed, kDownstreamTag));
    const auto organ = organ_blob(size.height, size.width, rng, 0.22, 0.38, 0.15, 0.45);
    Mask m(size.height, size.width);
    for (std::size_t i = 0; i < organ.size(); ++i) m.labels[i] = organ[i];
    return m;
}

Pool::Pool(std::vector<Case> cases, int num_classes) : cases_(std::move(cases)), num_classes_(num_classes) {
    std::set<std::string> ids;
    for (const Case& c : cases_)
        if (!ids.insert(c.case_id).second) throw InvalidArgument("duplicate case id " + c.case_id);
}

Pool Pool::fully_labeled(std::vector<Case> cases, int num_classes) {
    Pool p(std::move(cases), num_classes);
    for (std::size_t i = 0; i < p.size(); ++i) p.labeled_.insert(static_cast<int>(i));
    return p;
}

void Pool::check_index(std::size_t i) const {
    if (i >= cases_.size())
        throw InvalidArgument("pool index " + std::to_string(i) + " out of range (size " + std::to_string(size()) + ")");
}

const Tensor& Pool::image(std::size_t i) const {
    check_index(i);
    return cases_[i].image;
}

const std::string& Pool::case_id(std::size_t i) const {
    check_index(i);
    return cases_[i].case_id;
}

std::uint64_t Pool::seed(std::size_t i) const {
    check_index(i);
    return cases_[i].seed;
}

const Mask& Pool::mask(std::size_t i) const {
    check_index(i);
    if (!labeled_.contains(static_cast<int>(i)))
        throw InvalidArgument("mask of unlabeled case " + cases_[i].case_id + " is not visible");
    return cases_[i].mask;
}

bool Pool::is_labeled(std::size_t i) const {
    check_index(i);
    return labeled_.contains(static_cast<int>(i));
}

std::vector<int> Pool::labeled_indices() const { return {labeled_.begin(), labeled_.end()}; }

std::vector<int> Pool::unlabeled_indices() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(cases_.size()); ++i)
        if (!labeled_.contains(i)) out.push_back(i);
    return out;
}

void Pool::mark_labeled(std::span<const int> indices) {
    std::set<int> batch;
    for (int i : indices) {
        if (i < 0) throw InvalidArgument("negative pool index");
        check_index(static_cast<std::size_t>(i));
        if (labeled_.contains(i)) throw InvalidArgument("case " + cases_[i].case_id + " is already labeled");
        if (!batch.insert(i).second) throw InvalidArgument("index " + std::to_string(i) + " repeated in label request");
    }
    labeled_.insert(batch.begin(), batch.end());
}

Pool build_pool(int n, std::uint64_t seed, const LesionProfile& profile, ImageSize size, const std::string& id_prefix) {
    if (n < 1) throw InvalidArgument("pool size must be at least 1");
    profile.validate();
    std::vector<Case> cases;
    cases.reserve(n);
    for (int i = 0; i < n; ++i) {
        Case c = gen_downstream_case(derive_seed(seed, static_cast<std::uint64_t>(i)), size, profile);
        char buf[32];
        std::snprintf(buf, sizeof buf, "_%04d", i);
        c.case_id = (id_prefix.empty() ? "p" + std::to_string(seed) : id_prefix) + buf;
        cases.push_back(std::move(c));
    }
    return Pool(std::move(cases), profile.num_classes());
}

Tensor area_resample(const Tensor& map, ImageSize target) {
    if (map.dim() != 2) throw InvalidArgument("area_resample: expected [H,W], got " + shape_str(map.shape()));
    const int H = map.size(0), W = map.size(1);
    if (target.height < 1 || target.width < 1) throw InvalidArgument("area_resample: empty target");
    // 1D overlap weights; each output cell averages the source span it covers.
    auto weights = [](int in, int out) {
        std::vector<std::vector<std::pair<int, double>>> w(out);
        const double step = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            const double lo = o * step, hi = (o + 1) * step;
            for (int i = static_cast<int>(std::floor(lo)); i < std::min(in, static_cast<int>(std::ceil(hi))); ++i) {
                const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
                if (overlap > 0) w[o].emplace_back(i, overlap / step);
            }
        }
        return w;
    };
    const auto wy = weights(H, target.height), wx = weights(W, target.width);
    Tensor out({target.height, target.width});
    for (int oy = 0; oy < target.height; ++oy)
        for (int ox = 0; ox < target.width; ++ox) {
            double acc = 0.0;
            for (auto [iy, a] : wy[oy])
                for (auto [ix, b] : wx[ox]) acc += a * b * map.at(iy, ix);
            out.at(oy, ox) = acc;
        }
    return out;
}

Tensor foreground_prior(std::span<const Mask> masks, ImageSize target) {
    if (masks.empty()) throw InvalidArgument("foreground_prior: no masks");
    const int H = masks[0].height, W = masks[0].width;
    Tensor mean({H, W});
    for (const Mask& m : masks) {
        if (m.height != H || m.width != W) throw InvalidArgument("foreground_prior: masks differ in shape");
        for (std::size_t i = 0; i < m.size(); ++i) mean[i] += m.labels[i] > 0 ? 1.0 : 0.0;
    }
    mean *= 1.0 / static_cast<double>(masks.size());
    Tensor out = area_resample(mean, target);
    for (double& v : out.storage()) v = std::clamp(v, 0.0, 1.0);
    return out.reshaped({1, target.height, target.width});
}

} // namespace slpt
