#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace slpt {

/// 4-connected components of a binary raster. Each component is a list of
/// flat pixel indices; components are ordered by their first pixel in raster order.
std::vector<std::vector<int>> connected_components(std::span<const std::uint8_t> foreground, int height, int width);

} // namespace slpt
