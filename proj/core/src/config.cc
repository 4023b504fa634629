#include "hex4d/config.h"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace hex4d {

using nlohmann::json;

TrainConfig TrainConfig::preset(const std::string& name) {
  TrainConfig c;
  if (name == "desk") {
    c.stages = {{2000, 4, 48}, {1000, 1, 96}};
    c.checkpoint_every = 500;
  } else if (name == "paper") {
    c.stages = {{5000, 4, 64}, {5000, 1, 256}};
    c.checkpoint_every = 1000;
    c.weights.orient_ramp_iters = 5000;
  } else if (name == "test") {
    c.field.spatial_res = {16, 32};
    c.field.time_res = {4, 8};
    c.stages = {{6, 1, 16}, {4, 1, 16}};
    c.n_samples = 32;
    c.checkpoint_every = 5;
    c.normal_points = 64;
    c.guidance.gt_samples = 64;
  } else {
    throw ContractError(detail::concat("unknown config preset '", name, "'"));
  }
  // four held-out views x eight timestamps
  for (double az : {45.0, 135.0, 225.0, 315.0}) {
    CameraPose cam;
    cam.azimuth_deg = az;
    cam.elevation_deg = 15.0;
    c.eval_cameras.push_back(cam);
  }
  for (int k = 0; k < 8; ++k) c.eval_times.push_back(k / 7.0);
  return c;
}

void TrainConfig::validate() const {
  H4D_CHECK(!stages.empty(), "config needs at least one stage");
  for (const auto& s : stages) {
    H4D_CHECK(s.iterations >= 0, "negative stage iterations");
    H4D_CHECK(s.batch >= 1, "stage batch must be >= 1");
    H4D_CHECK(s.resolution >= 4, "stage resolution must be >= 4");
  }
  H4D_CHECK(field.spatial_res.size() == field.time_res.size() && !field.spatial_res.empty(),
            "field profile needs matching spatial/time resolution lists");
  H4D_CHECK(icl.probability >= 0.0 && icl.probability <= 1.0, "icl probability outside [0,1]");
  H4D_CHECK(icl.J >= 3, "icl batch needs J >= 3");
  H4D_CHECK(icl.spatial || icl.temporal || icl.probability == 0.0,
            "icl enabled with no axis to sample");
  H4D_CHECK(guidance.provider == "oracle_view" || guidance.provider == "external",
            "unknown guidance provider '", guidance.provider, "'");
  if (guidance.provider == "external")
    H4D_CHECK(!guidance.external_cmd.empty(), "external provider needs a command line");
  H4D_CHECK(guidance.omega == "one_minus_abar" || guidance.omega == "constant",
            "unknown omega tag '", guidance.omega, "'");
  H4D_CHECK(guidance.T >= 1, "schedule needs T >= 1");
  H4D_CHECK(guidance.tau_lo >= 0 && guidance.tau_lo <= guidance.tau_hi && guidance.tau_hi <= 1,
            "bad tau range");
  weights.validate();
  H4D_CHECK(n_samples >= 1, "n_samples must be >= 1");
  H4D_CHECK(checkpoint_every >= 1, "checkpoint_every must be >= 1");
  H4D_CHECK(normal_points >= 0, "normal_points must be >= 0");
  H4D_CHECK(normal_h > 0, "normal_h must be positive");
  H4D_CHECK(elevation_lo <= elevation_hi, "bad elevation range");
  for (double t : eval_times) H4D_CHECK(t >= 0 && t <= 1, "eval timestamp outside [0,1]");
  for (const auto& cam : eval_cameras) cam.validate();
}

FieldConfig make_field_config(const TrainConfig& cfg) {
  FieldConfig fc;
  for (size_t i = 0; i < cfg.field.spatial_res.size(); ++i) {
    HexPlaneConfig pc;
    pc.spatial_res = cfg.field.spatial_res[i];
    pc.time_res = cfg.field.time_res[i];
    pc.features = cfg.field.features;
    fc.scales.push_back(pc);
  }
  fc.head_hidden = cfg.field.head_hidden;
  fc.concat_mode = cfg.field.concat_mode;
  fc.validate();
  return fc;
}

NoiseSchedule make_schedule(const GuidanceConfig& g) {
  NoiseSchedule ns = NoiseSchedule::linear_beta(g.T);
  ns.omega_tag = g.omega == "constant" ? NoiseSchedule::Omega::constant
                                       : NoiseSchedule::Omega::one_minus_abar;
  return ns;
}

namespace {

template <class T>
void get_if(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

CameraPose camera_from_json(const json& j) {
  CameraPose c;
  get_if(j, "azimuth_deg", &c.azimuth_deg);
  get_if(j, "elevation_deg", &c.elevation_deg);
  get_if(j, "radius", &c.radius);
  get_if(j, "fov_deg", &c.fov_deg);
  return c;
}

json camera_to_json(const CameraPose& c) {
  return json{{"azimuth_deg", c.azimuth_deg},
              {"elevation_deg", c.elevation_deg},
              {"radius", c.radius},
              {"fov_deg", c.fov_deg}};
}

}  // namespace

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(detail::concat("config parse failure: ", e.what()));
  }
  try {
    TrainConfig c = TrainConfig::preset(j.value("profile", std::string("desk")));
    get_if(j, "seed", &c.seed);
    get_if(j, "dataset_dir", &c.dataset_dir);
    get_if(j, "scene_json", &c.scene_json);
    if (j.contains("field")) {
      const json& f = j.at("field");
      get_if(f, "spatial_res", &c.field.spatial_res);
      get_if(f, "time_res", &c.field.time_res);
      get_if(f, "features", &c.field.features);
      get_if(f, "head_hidden", &c.field.head_hidden);
      get_if(f, "concat_mode", &c.field.concat_mode);
    }
    if (j.contains("stages")) {
      c.stages.clear();
      for (const json& s : j.at("stages")) {
        StageConfig sc;
        get_if(s, "iterations", &sc.iterations);
        get_if(s, "batch", &sc.batch);
        get_if(s, "resolution", &sc.resolution);
        c.stages.push_back(sc);
      }
    }
    if (j.contains("icl")) {
      const json& i = j.at("icl");
      get_if(i, "probability", &c.icl.probability);
      get_if(i, "J", &c.icl.J);
      get_if(i, "squared", &c.icl.squared);
      get_if(i, "spatial", &c.icl.spatial);
      get_if(i, "temporal", &c.icl.temporal);
      get_if(i, "external_cmd", &c.icl.external_cmd);
      get_if(i, "timeout_ms", &c.icl.timeout_ms);
    }
    if (j.contains("guidance")) {
      const json& g = j.at("guidance");
      get_if(g, "provider", &c.guidance.provider);
      get_if(g, "external_cmd", &c.guidance.external_cmd);
      get_if(g, "timeout_ms", &c.guidance.timeout_ms);
      get_if(g, "T", &c.guidance.T);
      get_if(g, "omega", &c.guidance.omega);
      get_if(g, "tau_lo", &c.guidance.tau_lo);
      get_if(g, "tau_hi", &c.guidance.tau_hi);
      get_if(g, "anneal", &c.guidance.anneal);
      get_if(g, "gt_samples", &c.guidance.gt_samples);
      get_if(g, "cache_cap", &c.guidance.cache_cap);
      get_if(g, "max_d_elevation_deg", &c.guidance.orbit.max_d_elevation_deg);
      get_if(g, "max_d_radius", &c.guidance.orbit.max_d_radius);
    }
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      get_if(w, "sds", &c.weights.sds);
      get_if(w, "icl", &c.weights.icl);
      get_if(w, "recon", &c.weights.recon);
      get_if(w, "mask", &c.weights.mask);
      get_if(w, "normal_smooth", &c.weights.normal_smooth);
      get_if(w, "orient_lo", &c.weights.orient_lo);
      get_if(w, "orient_hi", &c.weights.orient_hi);
      get_if(w, "orient_ramp_iters", &c.weights.orient_ramp_iters);
    }
    if (j.contains("optim")) {
      const json& o = j.at("optim");
      get_if(o, "lr_grids", &c.optim.lr_grids);
      get_if(o, "lr_mlp", &c.optim.lr_mlp);
      get_if(o, "beta1", &c.optim.beta1);
      get_if(o, "beta2", &c.optim.beta2);
      get_if(o, "eps", &c.optim.eps);
    }
    get_if(j, "n_samples", &c.n_samples);
    if (j.contains("background")) {
      auto v = j.at("background").get<std::vector<double>>();
      H4D_CHECK(v.size() == 3, "background needs 3 components");
      c.background = {v[0], v[1], v[2]};
    }
    get_if(j, "checkpoint_every", &c.checkpoint_every);
    get_if(j, "normal_points", &c.normal_points);
    get_if(j, "normal_h", &c.normal_h);
    get_if(j, "elevation_lo", &c.elevation_lo);
    get_if(j, "elevation_hi", &c.elevation_hi);
    if (j.contains("eval_cameras")) {
      c.eval_cameras.clear();
      for (const json& cc : j.at("eval_cameras")) c.eval_cameras.push_back(camera_from_json(cc));
    }
    get_if(j, "eval_times", &c.eval_times);

    if (const char* env = std::getenv("HEX4D_SEED")) c.seed = std::strtoull(env, nullptr, 10);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw IoError(detail::concat("config field error: ", e.what()));
  }
}

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["dataset_dir"] = c.dataset_dir;
  j["scene_json"] = c.scene_json;
  j["field"] = {{"spatial_res", c.field.spatial_res},
                {"time_res", c.field.time_res},
                {"features", c.field.features},
                {"head_hidden", c.field.head_hidden},
                {"concat_mode", c.field.concat_mode}};
  j["stages"] = json::array();
  for (const auto& s : c.stages)
    j["stages"].push_back(
        {{"iterations", s.iterations}, {"batch", s.batch}, {"resolution", s.resolution}});
  j["icl"] = {{"probability", c.icl.probability}, {"J", c.icl.J},
              {"squared", c.icl.squared},         {"spatial", c.icl.spatial},
              {"temporal", c.icl.temporal},       {"external_cmd", c.icl.external_cmd},
              {"timeout_ms", c.icl.timeout_ms}};
  j["guidance"] = {{"provider", c.guidance.provider},
                   {"external_cmd", c.guidance.external_cmd},
                   {"timeout_ms", c.guidance.timeout_ms},
                   {"T", c.guidance.T},
                   {"omega", c.guidance.omega},
                   {"tau_lo", c.guidance.tau_lo},
                   {"tau_hi", c.guidance.tau_hi},
                   {"anneal", c.guidance.anneal},
                   {"gt_samples", c.guidance.gt_samples},
                   {"cache_cap", c.guidance.cache_cap},
                   {"max_d_elevation_deg", c.guidance.orbit.max_d_elevation_deg},
                   {"max_d_radius", c.guidance.orbit.max_d_radius}};
  j["weights"] = {{"sds", c.weights.sds},
                  {"icl", c.weights.icl},
                  {"recon", c.weights.recon},
                  {"mask", c.weights.mask},
                  {"normal_smooth", c.weights.normal_smooth},
                  {"orient_lo", c.weights.orient_lo},
                  {"orient_hi", c.weights.orient_hi},
                  {"orient_ramp_iters", c.weights.orient_ramp_iters}};
  j["optim"] = {{"lr_grids", c.optim.lr_grids},
                {"lr_mlp", c.optim.lr_mlp},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"eps", c.optim.eps}};
  j["n_samples"] = c.n_samples;
  j["background"] = {c.background[0], c.background[1], c.background[2]};
  j["checkpoint_every"] = c.checkpoint_every;
  j["normal_points"] = c.normal_points;
  j["normal_h"] = c.normal_h;
  j["elevation_lo"] = c.elevation_lo;
  j["elevation_hi"] = c.elevation_hi;
  j["eval_cameras"] = json::array();
  for (const auto& cam : c.eval_cameras) j["eval_cameras"].push_back(camera_to_json(cam));
  j["eval_times"] = c.eval_times;
  return j.dump(2);
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(detail::concat("cannot open config '", path, "'"));
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace hex4d
