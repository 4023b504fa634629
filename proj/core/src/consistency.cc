#include "hex4d/consistency.h"

#include <cmath>
#include <cstdio>

#include "hex4d/image.h"
#include "hex4d/subprocess.h"

namespace hex4d {

void FrameBatch::validate() const {
  H4D_CHECK(J() >= 3, "ICL batch needs J >= 3 frames, got ", J());
  H4D_CHECK(cameras.size() == frames.size() && times.size() == frames.size(),
            "frame/camera/time counts disagree");
  for (int j = 1; j < J(); ++j) {
    H4D_CHECK(frames[size_t(j)].shape == frames[0].shape, "frame ", j, " shape differs");
    if (axis == Axis::spatial)
      H4D_CHECK(cameras[size_t(j)].azimuth_deg > cameras[size_t(j) - 1].azimuth_deg,
                "spatial batch azimuths must increase");
    else
      H4D_CHECK(times[size_t(j)] > times[size_t(j) - 1], "temporal batch times must increase");
  }
}

Tensorf LinearInterpolator::interpolate(const Tensorf& a, const Tensorf& b, double gamma) {
  H4D_CHECK(gamma > 0.0 && gamma < 1.0, "gamma ", gamma, " outside (0,1)");
  H4D_CHECK(a.same_shape(b), "interpolation endpoints must share a shape");
  Tensorf out(a.shape);
  float g = float(gamma);
  for (int64_t i = 0; i < a.size(); ++i)
    out.v[size_t(i)] = (1.0f - g) * a.v[size_t(i)] + g * b.v[size_t(i)];
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string interp_request(const Tensorf& a, const Tensorf& b, double gamma) {
  std::string req = "HEX4D-INTERP 1\n";
  req += "gamma " + fmt(gamma) + "\n";
  wire_put_png(req, encode_png16(a));
  wire_put_png(req, encode_png16(b));
  return req;
}

void parse_interp_request(const std::string& bytes, Tensorf* a, Tensorf* b, double* gamma) {
  WireReader r(bytes);
  if (r.line() != "HEX4D-INTERP 1") throw IoError("interp request: bad magic");
  std::string gl = r.line();
  if (std::sscanf(gl.c_str(), "gamma %lf", gamma) != 1)
    throw IoError("interp request: bad gamma line");
  *a = decode_png(r.png());
  *b = decode_png(r.png());
}

std::string interp_reply(const Tensorf& x) {
  std::string rep = "HEX4D-INTERP-R 1\n";
  wire_put_png(rep, encode_png16(x));
  return rep;
}

Tensorf parse_interp_reply(const std::string& bytes) {
  WireReader r(bytes);
  if (r.line() != "HEX4D-INTERP-R 1") throw IoError("interp reply: bad magic");
  return decode_png(r.png());
}

ExternalInterpolator::ExternalInterpolator(std::vector<std::string> argv, int timeout_ms)
    : argv_(std::move(argv)), timeout_ms_(timeout_ms) {
  H4D_CHECK(!argv_.empty(), "external interpolator needs a command line");
}

Tensorf ExternalInterpolator::interpolate(const Tensorf& a, const Tensorf& b, double gamma) {
  H4D_CHECK(gamma > 0.0 && gamma < 1.0, "gamma ", gamma, " outside (0,1)");
  H4D_CHECK(a.same_shape(b), "interpolation endpoints must share a shape");
  auto res = run_subprocess(argv_, interp_request(a, b, gamma), timeout_ms_);
  if (res.exit_code != 0)
    throw IoError(detail::concat("interpolator '", argv_[0], "' exited with ", res.exit_code,
                                 ": ", res.err));
  Tensorf out = parse_interp_reply(res.out);
  H4D_CHECK(out.same_shape(a), "interpolator returned a mismatched shape");
  return out;
}

double icl_gamma(int j, int J) {
  H4D_CHECK(J >= 3 && j >= 2 && j <= J - 1, "interior index ", j, " outside 2..", J - 1);
  return double(j - 1) / double(J - 1);
}

IclResult icl_loss(const FrameBatch& batch, Interpolator& interp, bool squared) {
  batch.validate();
  const int J = batch.J();
  const bool endpoint_grads = interp.differentiable();

  IclResult res;
  res.frame_grads.resize(size_t(J));
  for (int j = 0; j < J; ++j) res.frame_grads[size_t(j)] = Tensorf(batch.frames[0].shape);

  for (int j = 2; j <= J - 1; ++j) {
    double g = icl_gamma(j, J);
    Tensorf xhat = interp.interpolate(batch.frames[0], batch.frames[size_t(J) - 1], g);
    H4D_CHECK(xhat.same_shape(batch.frames[0]), "interpolator returned a mismatched shape");
    const Tensorf& xj = batch.frames[size_t(j) - 1];

    double ss = 0.0;
    for (int64_t i = 0; i < xj.size(); ++i) {
      double r = double(xj.v[size_t(i)]) - double(xhat.v[size_t(i)]);
      ss += r * r;
    }
    double norm = std::sqrt(ss);

    // d(loss)/d(residual): unsquared L2 uses r/|r| (subgradient 0 at 0),
    // squared uses 2r.
    double coef;
    if (squared) {
      res.loss += ss;
      coef = 2.0;
    } else {
      res.loss += norm;
      coef = norm > 1e-12 ? 1.0 / norm : 0.0;
    }
    for (int64_t i = 0; i < xj.size(); ++i) {
      float r = float(coef * (double(xj.v[size_t(i)]) - double(xhat.v[size_t(i)])));
      res.frame_grads[size_t(j) - 1].v[size_t(i)] += r;
      if (endpoint_grads) {
        res.frame_grads[0].v[size_t(i)] -= float((1.0 - g)) * r;
        res.frame_grads[size_t(J) - 1].v[size_t(i)] -= float(g) * r;
      }
    }
  }
  return res;
}

std::vector<CameraPose> sample_spatial_batch(Rng& rng, const CameraPose& base, int J,
                                             double min_step_deg, double max_step_deg) {
  H4D_CHECK(J >= 3, "spatial batch needs J >= 3");
  H4D_CHECK(min_step_deg > 0 && min_step_deg <= max_step_deg, "bad azimuth step range");
  double step = rng.uniform(min_step_deg, max_step_deg);
  std::vector<CameraPose> cams;
  for (int k = 0; k < J; ++k) {
    CameraPose c = base;
    c.azimuth_deg = base.azimuth_deg + k * step;
    cams.push_back(c);
  }
  return cams;
}

std::vector<int> sample_temporal_batch(Rng& rng, int J, int n_frames) {
  H4D_CHECK(J >= 3, "temporal batch needs J >= 3");
  H4D_CHECK(n_frames >= J, "dataset has ", n_frames, " frames, need at least ", J);
  int start = rng.uniform_int(0, n_frames - J);
  std::vector<int> idx(static_cast<size_t>(J));
  for (int k = 0; k < J; ++k) idx[size_t(k)] = start + k;
  return idx;
}

}  // namespace hex4d
