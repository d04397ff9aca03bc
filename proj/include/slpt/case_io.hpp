#pragma once

#include <filesystem>

#include "slpt/data_synth.hpp"

namespace slpt {

/// On-disk case collection:
///
///   <dir>/manifest.json      format tag, image size, class table, case list
///   <dir>/cases/<id>.case    binary image + mask
///
/// Binary case layout (little-endian):
///   char[8]  magic "SLPTCASE"
///   u32      version (1)
///   u32      channels, height, width
///   f64      image[channels * height * width]   (C, H, W order)
///   i32      mask[height * width]               (row-major)
void save_pool(const std::filesystem::path& dir, const Pool& pool, const LesionProfile& profile);
Pool load_pool(const std::filesystem::path& dir);

void write_case_file(const std::filesystem::path& file, const Case& c);
Case read_case_file(const std::filesystem::path& file);

} // namespace slpt
