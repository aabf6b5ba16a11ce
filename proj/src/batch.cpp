#include "idistill/batch.hpp"

#include <algorithm>

namespace idistill {

nn::Tensor stack_images(std::span<const ImageTensor> images) {
  if (images.empty()) throw ValidationError("cannot stack an empty image list");
  const ImageTensor& first = images.front();
  nn::Tensor batch(static_cast<int>(images.size()), first.channels(), first.height(), first.width());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(first)) throw ValidationError("images in a batch must share one shape");
    std::copy(images[i].data().begin(), images[i].data().end(), batch.sample(static_cast<int>(i)));
  }
  return batch;
}

ImageTensor unstack_image(const nn::Tensor& batch, int i) {
  std::vector<float> data(batch.sample(i), batch.sample(i) + batch.sample_size());
  for (float& v : data) v = std::clamp(v, 0.0f, 1.0f);
  return ImageTensor(batch.h(), batch.w(), batch.c(), std::move(data));
}

LatentVector row_vector(const nn::Tensor& batch, int i) {
  const float* src = batch.sample(i);
  LatentVector v(static_cast<Eigen::Index>(batch.sample_size()));
  for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = src[k];
  return v;
}

ImageTensor flip_horizontal(const ImageTensor& image) {
  ImageTensor out(image.height(), image.width(), image.channels());
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) out.at(c, y, x) = image.at(c, y, image.width() - 1 - x);
    }
  }
  return out;
}

}  // namespace idistill
