#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "slpt/autograd.hpp"
#include "slpt/tensor.hpp"

namespace slpt {

struct ImageSize {
    int height = 64;
    int width = 64;
    bool operator==(const ImageSize&) const = default;
};

struct LesionClass {
    std::string name;
    double frequency = 0.0;
    double radius_min = 0.05;  ///< fraction of the image height
    double radius_max = 0.10;
    double contrast = -0.2;    ///< intensity offset relative to the organ
};

/// Lesion classes 1..n (label 0 is background, the organ is not a class).
struct LesionProfile {
    std::vector<LesionClass> classes;

    /// Three lesion types, the third one rare (10%) and low-contrast.
    static LesionProfile default_profile();
    int num_classes() const { return static_cast<int>(classes.size()) + 1; }
    void validate() const;
};

struct Case {
    Tensor image;   ///< [1, H, W] in [0, 1]
    Mask mask;      ///< [H, W]
    std::string case_id;
    std::uint64_t seed = 0;
    std::vector<int> lesion_classes;  ///< drawn class of each placed lesion
};

/// Organ-segmentation case used for backbone pretraining (mask is 0/1).
Case gen_pretrain_case(std::uint64_t seed, ImageSize size = {});

/// Downstream case: organ blob with 0-4 lesions inside it, labelled by class.
Case gen_downstream_case(std::uint64_t seed, ImageSize size, const LesionProfile& profile);

/// Organ support (0/1) underlying the downstream case of this seed.
Mask downstream_organ(std::uint64_t seed, ImageSize size);

/// Indexed case collection plus the set of indices whose masks are revealed.
/// Masks of unlabeled cases are unreachable through mask(): this is the
/// access guard that keeps training code away from unrevealed annotations.
class Pool {
public:
    Pool() = default;
    Pool(std::vector<Case> cases, int num_classes);

    /// Every case revealed (held-out evaluation sets).
    static Pool fully_labeled(std::vector<Case> cases, int num_classes);

    std::size_t size() const noexcept { return cases_.size(); }
    int num_classes() const noexcept { return num_classes_; }

    const Tensor& image(std::size_t i) const;
    const std::string& case_id(std::size_t i) const;
    std::uint64_t seed(std::size_t i) const;
    /// Throws InvalidArgument for unlabeled indices.
    const Mask& mask(std::size_t i) const;

    bool is_labeled(std::size_t i) const;
    const std::set<int>& labeled() const noexcept { return labeled_; }
    std::vector<int> labeled_indices() const;
    std::vector<int> unlabeled_indices() const;

    /// Reveals masks; rejects out-of-range, duplicate or already-labeled indices.
    void mark_labeled(std::span<const int> indices);

    /// Raw access for persistence only.
    const std::vector<Case>& cases_for_export() const noexcept { return cases_; }

private:
    void check_index(std::size_t i) const;

    std::vector<Case> cases_;
    std::set<int> labeled_;
    int num_classes_ = 2;
};

/// n downstream cases; case i uses a seed derived from (seed, i) and is
/// named <prefix>_<i>, the prefix defaulting to "p<seed>".
Pool build_pool(int n, std::uint64_t seed, const LesionProfile& profile, ImageSize size = {},
                const std::string& id_prefix = "");

/// Per-pixel mean of binarized masks, area-averaged to the target size. Returns [1, H', W'].
Tensor foreground_prior(std::span<const Mask> masks, ImageSize target);

/// Area-averaging resample of a single-channel map.
Tensor area_resample(const Tensor& map_hw, ImageSize target);

/// Zero-mean unit-variance Gaussian-smoothed white noise [H, W].
Tensor smooth_field(int height, int width, double sigma, std::uint64_t seed);

} // namespace slpt
