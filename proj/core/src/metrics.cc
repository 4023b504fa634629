#include "hex4d/metrics.h"

#include <cmath>
#include <vector>

namespace hex4d {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gaussian_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> v(kWin);
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
      double x = i - (kWin - 1) / 2.0;
      v[size_t(i)] = std::exp(-x * x / (2.0 * kSigma * kSigma));
      sum += v[size_t(i)];
    }
    for (auto& x : v) x /= sum;
    return v;
  }();
  return k;
}

// Separable valid-mode Gaussian filter of an H x W plane.
void gauss_filter(const std::vector<double>& img, int h, int w, std::vector<double>* out,
                  int* oh, int* ow) {
  const auto& k = gaussian_kernel();
  *oh = h - kWin + 1;
  *ow = w - kWin + 1;
  std::vector<double> rows(size_t(h) * size_t(*ow));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < *ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[size_t(i)] * img[size_t(y) * w + x + i];
      rows[size_t(y) * size_t(*ow) + x] = acc;
    }
  }
  out->assign(size_t(*oh) * size_t(*ow), 0.0);
  for (int y = 0; y < *oh; ++y) {
    for (int x = 0; x < *ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWin; ++i) acc += k[size_t(i)] * rows[size_t(y + i) * size_t(*ow) + x];
      (*out)[size_t(y) * size_t(*ow) + x] = acc;
    }
  }
}

void image_dims(const std::vector<int>& shape, int* h, int* w, int* c) {
  H4D_CHECK(shape.size() == 2 || shape.size() == 3, "metrics expect (H,W) or (H,W,C) images");
  *h = shape[0];
  *w = shape[1];
  *c = shape.size() == 3 ? shape[2] : 1;
}

}  // namespace

template <class S>
double psnr(const Tensor<S>& a, const Tensor<S>& b) {
  H4D_CHECK(a.shape == b.shape, "psnr shape mismatch");
  H4D_CHECK(a.size() > 0, "psnr of empty image");
  double mse = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = double(a.v[size_t(i)]) - double(b.v[size_t(i)]);
    mse += d * d;
  }
  mse /= double(a.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

template <class S>
double ssim(const Tensor<S>& a, const Tensor<S>& b) {
  H4D_CHECK(a.shape == b.shape, "ssim shape mismatch");
  int h, w, c;
  image_dims(a.shape, &h, &w, &c);
  H4D_CHECK(h >= kWin && w >= kWin, "ssim needs at least an ", kWin, "x", kWin, " image");

  double total = 0.0;
  std::vector<double> x(size_t(h) * size_t(w)), y(size_t(h) * size_t(w));
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  std::vector<double> mx, my, mxx, myy, mxy;
  for (int ch = 0; ch < c; ++ch) {
    for (int64_t p = 0; p < int64_t(h) * w; ++p) {
      x[size_t(p)] = double(a.v[size_t(p * c + ch)]);
      y[size_t(p)] = double(b.v[size_t(p * c + ch)]);
      xx[size_t(p)] = x[size_t(p)] * x[size_t(p)];
      yy[size_t(p)] = y[size_t(p)] * y[size_t(p)];
      xy[size_t(p)] = x[size_t(p)] * y[size_t(p)];
    }
    int oh, ow;
    gauss_filter(x, h, w, &mx, &oh, &ow);
    gauss_filter(y, h, w, &my, &oh, &ow);
    gauss_filter(xx, h, w, &mxx, &oh, &ow);
    gauss_filter(yy, h, w, &myy, &oh, &ow);
    gauss_filter(xy, h, w, &mxy, &oh, &ow);

    double acc = 0.0;
    for (size_t i = 0; i < mx.size(); ++i) {
      double mux = mx[i], muy = my[i];
      double vx = mxx[i] - mux * mux;
      double vy = myy[i] - muy * muy;
      double cov = mxy[i] - mux * muy;
      acc += ((2 * mux * muy + kC1) * (2 * cov + kC2)) /
             ((mux * mux + muy * muy + kC1) * (vx + vy + kC2));
    }
    total += acc / double(mx.size());
  }
  return total / c;
}

template <class S>
double mask_iou(const Tensor<S>& a, const Tensor<S>& b, double thresh) {
  H4D_CHECK(a.size() == b.size(), "mask_iou size mismatch");
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    bool pa = double(a.v[size_t(i)]) >= thresh;
    bool pb = double(b.v[size_t(i)]) >= thresh;
    inter += pa && pb;
    uni += pa || pb;
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);
template double mask_iou(const Tensor<float>&, const Tensor<float>&, double);
template double mask_iou(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace hex4d
