#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "slpt/autograd.hpp"
#include "slpt/rng.hpp"

namespace slpt {

enum class AugStrength { light, medium, heavy };

std::string to_string(AugStrength s);
AugStrength parse_aug_strength(const std::string& s);

/// Concrete geometric transform applied jointly to an image and its mask.
struct AugmentDraw {
    double scale = 1.0;
    double angle_deg = 0.0;
    bool mirror = false;           ///< horizontal flip
    double elastic_alpha = 0.0;    ///< displacement amplitude in pixels; 0 disables
    double elastic_sigma = 4.0;
    std::uint64_t elastic_seed = 0;

    bool is_identity() const { return scale == 1.0 && angle_deg == 0.0 && !mirror && elastic_alpha == 0.0; }
};

/// light: +-5% scale, +-10 deg; medium: +-10%, +-20 deg, mirror;
/// heavy: +-15%, +-30 deg, mirror, elastic.
AugmentDraw draw_augment(AugStrength strength, Rng& rng);

/// Image [C,H,W] resampled bilinearly, mask nearest-neighbour; both edge-clamped.
std::pair<Tensor, Mask> apply_augment(const Tensor& image, const Mask& mask, const AugmentDraw& draw);

std::pair<Tensor, Mask> augment(const Tensor& image, const Mask& mask, AugStrength strength, std::uint64_t seed);

} // namespace slpt
