#include "slpt/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "slpt/data_synth.hpp"
#include "slpt/errors.hpp"

namespace slpt {

std::string to_string(AugStrength s) {
    switch (s) {
    case AugStrength::light: return "light";
    case AugStrength::medium: return "medium";
    case AugStrength::heavy: return "heavy";
    }
    return "light";
}

AugStrength parse_aug_strength(const std::string& s) {
    if (s == "light") return AugStrength::light;
    if (s == "medium") return AugStrength::medium;
    if (s == "heavy") return AugStrength::heavy;
    throw InvalidArgument("unknown augmentation strength '" + s + "'");
}

AugmentDraw draw_augment(AugStrength strength, Rng& rng) {
    struct Tier {
        double scale, angle;
        bool mirror, elastic;
    };
    const Tier t = strength == AugStrength::light    ? Tier{0.05, 10.0, false, false}
                   : strength == AugStrength::medium ? Tier{0.10, 20.0, true, false}
                                                     : Tier{0.15, 30.0, true, true};
    AugmentDraw d;
    d.scale = uniform(rng, 1.0 - t.scale, 1.0 + t.scale);
    d.angle_deg = uniform(rng, -t.angle, t.angle);
    d.mirror = t.mirror && uniform(rng, 0.0, 1.0) < 0.5;
    if (t.elastic) {
        d.elastic_alpha = uniform(rng, 0.0, 3.0);
        d.elastic_seed = rng();
    }
    return d;
}

std::pair<Tensor, Mask> apply_augment(const Tensor& image, const Mask& mask, const AugmentDraw& d) {
    if (image.dim() != 3 || image.size(1) != mask.height || image.size(2) != mask.width)
        throw InvalidArgument("augment: image " + shape_str(image.shape()) + " and mask are not paired");
    if (d.is_identity()) return {image, mask};
    const int C = image.size(0), H = image.size(1), W = image.size(2);
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double rad = d.angle_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    Tensor dy_field, dx_field;
    if (d.elastic_alpha > 0.0) {
        dy_field = smooth_field(H, W, d.elastic_sigma, derive_seed(d.elastic_seed, 1));
        dx_field = smooth_field(H, W, d.elastic_sigma, derive_seed(d.elastic_seed, 2));
    }
    Tensor out_img({C, H, W});
    Mask out_mask(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            // Inverse map: output pixel -> source coordinate.
            double vy = y - cy, vx = x - cx;
            if (d.mirror) vx = -vx;
            double sy = (cs * vy + sn * vx) / d.scale + cy;
            double sx = (-sn * vy + cs * vx) / d.scale + cx;
            if (d.elastic_alpha > 0.0) {
                sy += d.elastic_alpha * dy_field.at(y, x);
                sx += d.elastic_alpha * dx_field.at(y, x);
            }
            sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
            sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
            const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
            const double wy = sy - y0, wx = sx - x0;
            for (int c = 0; c < C; ++c) {
                double v = (1 - wy) * (1 - wx) * image.at(c, y0, x0);
                if (wx > 0) v += (1 - wy) * wx * image.at(c, y0, x1);
                if (wy > 0) v += wy * (1 - wx) * image.at(c, y1, x0);
                if (wx > 0 && wy > 0) v += wy * wx * image.at(c, y1, x1);
                out_img.at(c, y, x) = v;
            }
            const int ny = std::clamp(static_cast<int>(std::lround(sy)), 0, H - 1);
            const int nx = std::clamp(static_cast<int>(std::lround(sx)), 0, W - 1);
            out_mask.at(y, x) = mask.at(ny, nx);
        }
    return {std::move(out_img), std::move(out_mask)};
}

std::pair<Tensor, Mask> augment(const Tensor& image, const Mask& mask, AugStrength strength, std::uint64_t seed) {
    Rng rng(seed);
    return apply_augment(image, mask, draw_augment(strength, rng));
}

} // namespace slpt
