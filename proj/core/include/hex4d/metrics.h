#pragma once

#include "hex4d/tensor.h"

namespace hex4d {

// Peak-signal-to-noise ratio with peak 1.0, in dB, capped at 99 (the cap
// stands in for infinity on identical images).
template <class S>
double psnr(const Tensor<S>& a, const Tensor<S>& b);

// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5,
// K1 = 0.01, K2 = 0.03, dynamic range 1.0), averaged over channels and valid
// window positions. Images are (H,W,C) or (H,W) with H,W >= 11.
template <class S>
double ssim(const Tensor<S>& a, const Tensor<S>& b);

// Intersection-over-union of two soft masks binarized at `thresh`. Two empty
// masks count as a perfect match.
template <class S>
double mask_iou(const Tensor<S>& a, const Tensor<S>& b, double thresh = 0.5);

extern template double psnr(const Tensor<float>&, const Tensor<float>&);
extern template double psnr(const Tensor<double>&, const Tensor<double>&);
extern template double ssim(const Tensor<float>&, const Tensor<float>&);
extern template double ssim(const Tensor<double>&, const Tensor<double>&);
extern template double mask_iou(const Tensor<float>&, const Tensor<float>&, double);
extern template double mask_iou(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace hex4d
