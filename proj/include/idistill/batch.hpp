#pragma once

#include <span>

#include "idistill/core.hpp"
#include "idistill/losses.hpp"
#include "idistill/nn.hpp"

namespace idistill {

/// Packs same-shaped images into one (N, C, H, W) tensor.
nn::Tensor stack_images(std::span<const ImageTensor> images);

/// Extracts sample i of a batch as an image, clamping into [0,1].
ImageTensor unstack_image(const nn::Tensor& batch, int i);

/// Row i of an (N, D, 1, 1) tensor as a double vector.
LatentVector row_vector(const nn::Tensor& batch, int i);

/// Mirrors every image left to right.
ImageTensor flip_horizontal(const ImageTensor& image);

}  // namespace idistill
