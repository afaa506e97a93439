#pragma once

#include <filesystem>

#include "kpvp/nn.hpp"

namespace kpvp {

// Frames are single-sample 3-channel tensors with values in [-1, 1].
using Frame = nn::Tensor<float>;

// 8-bit RGB PNG with symmetric quantization: byte = round((v+1)/2 * 255).
Frame load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Frame& frame);

}  // namespace kpvp
