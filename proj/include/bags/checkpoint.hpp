#pragma once

#include "bags/trainer.hpp"

#include <filesystem>
#include <string>

namespace bags {

/// Binary little-endian training snapshot: magic "BAGS", u32 version, then
/// tagged sections (4-byte tag, u64 length, payload). Arrays are stored as
/// f64 regardless of the build's precision. Sections: CLUD (cloud), BPN_
/// (network layout, head registry and weights; absent for baseline runs), OPTM (Adam
/// moments), SCHD (iteration, view order, densification stats), RNG_ and
/// LOG_ (loss history).
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);

/// Throws std::runtime_error on a truncated or foreign file.
TrainState load_checkpoint(const std::filesystem::path& path);

/// Section tags present in a checkpoint file, in file order.
std::vector<std::string> checkpoint_sections(const std::filesystem::path& path);

}  // namespace bags
