#include <doctest.h>

#include <hex4d/image.h>
#include <hex4d/trainer.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace hex4d;

namespace {

struct Fixture {
  SyntheticScene scene = make_orbiter_scene();
  Dataset ds;
  TrainConfig cfg = TrainConfig::preset("test");

  Fixture() {
    ds = make_dataset(scene, CameraPose{}, 6, 16, 16, 128);
    cfg.eval_cameras.clear();  // evaluation is opt-in per test
    cfg.eval_times.clear();
  }

  CascadeField<float> make_field(ParamStore<float>& ps, uint64_t seed = 7) const {
    CascadeField<float> field(make_field_config(cfg));
    Rng rng(seed);
    field.init_params(ps, rng);
    return field;
  }
};

bool params_bitwise_equal(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (int i = 0; i < a.size(); ++i) {
    if (a.entry(i).name != b.entry(i).name) return false;
    if (!(a.entry(i).value.v == b.entry(i).value.v)) return false;
  }
  return true;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string temp_dir(const std::string& tag) {
  std::string d = "/tmp/hex4d_trainer_" + tag;
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("trainer: zero iterations leave parameters untouched and the report empty") {
  Fixture fx;
  for (auto& s : fx.cfg.stages) s.iterations = 0;
  ParamStore<float> ps;
  CascadeField<float> field = fx.make_field(ps);
  ParamStore<float> ref;
  CascadeField<float> field_ref = fx.make_field(ref);

  TrainReport rep = train(fx.cfg, fx.ds, field, ps, "", "", &fx.scene);
  CHECK(rep.rows.empty());
  CHECK(rep.checkpoint_path.empty());
  CHECK(params_bitwise_equal(ps, ref));
}

TEST_CASE("trainer: strict SDS/recon alternation, stage labels, and ICL stage masking") {
  Fixture fx;
  fx.cfg.icl.probability = 1.0;  // fire every stage-1 iteration
  ParamStore<float> ps;
  CascadeField<float> field = fx.make_field(ps);

  TrainReport rep = train(fx.cfg, fx.ds, field, ps, "", "", &fx.scene);
  REQUIRE(int(rep.rows.size()) == 10);  // 6 + 4
  int n_sds = 0, n_recon = 0;
  for (const IterRow& row : rep.rows) {
    CHECK(row.iteration == &row - rep.rows.data());
    CHECK(row.step == (row.iteration % 2 == 0 ? 's' : 'r'));
    CHECK(row.stage == (row.iteration < 6 ? 0 : 1));
    if (row.step == 's') {
      ++n_sds;
      CHECK(row.comps.recon == 0.0);
      CHECK(row.comps.sds > 0.0);
    } else {
      ++n_recon;
      CHECK(row.comps.sds == 0.0);
      CHECK(row.comps.recon >= 0.0);
    }
    if (row.stage == 0) {
      CHECK(row.icl_fired);
      CHECK(row.comps.icl >= 0.0);
    } else {
      CHECK(!row.icl_fired);   // stage 2 never applies ICL
      CHECK(row.comps.icl == 0.0);
    }
    CHECK(std::isfinite(row.total));
  }
  CHECK(n_sds == 5);
  CHECK(n_recon == 5);
}

TEST_CASE("trainer: same seed reproduces the loss curve and parameters bitwise") {
  Fixture fx;
  auto run = [&](uint64_t seed) {
    TrainConfig cfg = fx.cfg;
    cfg.seed = seed;
    ParamStore<float> ps;
    CascadeField<float> field = fx.make_field(ps);
    TrainReport rep = train(cfg, fx.ds, field, ps, "", "", &fx.scene);
    return std::make_pair(std::move(rep), std::move(ps));
  };
  auto [rep1, ps1] = run(1234);
  auto [rep2, ps2] = run(1234);
  REQUIRE(rep1.rows.size() == rep2.rows.size());
  for (size_t i = 0; i < rep1.rows.size(); ++i) {
    CHECK(rep1.rows[i].total == rep2.rows[i].total);
    CHECK(rep1.rows[i].comps.sds == rep2.rows[i].comps.sds);
    CHECK(rep1.rows[i].comps.icl == rep2.rows[i].comps.icl);
    CHECK(rep1.rows[i].comps.recon == rep2.rows[i].comps.recon);
    CHECK(rep1.rows[i].comps.mask == rep2.rows[i].comps.mask);
    CHECK(rep1.rows[i].comps.normal_smooth == rep2.rows[i].comps.normal_smooth);
    CHECK(rep1.rows[i].comps.orientation == rep2.rows[i].comps.orientation);
    CHECK(rep1.rows[i].icl_fired == rep2.rows[i].icl_fired);
  }
  CHECK(params_bitwise_equal(ps1, ps2));

  auto [rep3, ps3] = run(99);
  bool any_diff = !params_bitwise_equal(ps1, ps3);
  for (size_t i = 0; i < rep1.rows.size() && !any_diff; ++i)
    any_diff = rep1.rows[i].total != rep3.rows[i].total;
  CHECK(any_diff);
}

TEST_CASE("trainer: checkpoint resume matches the uninterrupted run bitwise") {
  Fixture fx;
  std::string dir_a = temp_dir("full");
  std::string dir_b = temp_dir("resume");

  ParamStore<float> ps_a;
  CascadeField<float> field_a = fx.make_field(ps_a);
  TrainReport rep_a = train(fx.cfg, fx.ds, field_a, ps_a, dir_a, "", &fx.scene);
  REQUIRE(rep_a.rows.size() == 10);

  // test preset checkpoints every 5 iterations
  std::string mid = dir_a + "/checkpoint_000005.ckpt";
  REQUIRE(std::filesystem::exists(mid));
  REQUIRE(std::filesystem::exists(dir_a + "/checkpoint_000010.ckpt"));
  CHECK(rep_a.checkpoint_path == dir_a + "/checkpoint_000010.ckpt");

  ParamStore<float> ps_b;  // populated from the checkpoint
  CascadeField<float> field_b(make_field_config(fx.cfg));
  TrainReport rep_b = train(fx.cfg, fx.ds, field_b, ps_b, dir_b, mid, &fx.scene);
  CHECK(rep_b.rows.size() == 5);  // iterations 5..9
  CHECK(rep_b.rows.front().iteration == 5);
  CHECK(params_bitwise_equal(ps_a, ps_b));
  for (size_t i = 0; i < rep_b.rows.size(); ++i)
    CHECK(rep_b.rows[i].total == rep_a.rows[i + 5].total);

  // the CSV carries one line per iteration plus the header
  std::string csv = slurp(dir_a + "/train_log.csv");
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 11);

  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("trainer: stage resolution must divide the dataset and oracle guidance needs a scene") {
  Fixture fx;
  ParamStore<float> ps;
  CascadeField<float> field = fx.make_field(ps);

  TrainConfig bad = fx.cfg;
  bad.stages[0].resolution = 12;  // 16 % 12 != 0
  CHECK_THROWS_AS(train(bad, fx.ds, field, ps, "", "", &fx.scene), ContractError);

  CHECK_THROWS_AS(train(fx.cfg, fx.ds, field, ps, "", "", nullptr), ContractError);
}

TEST_CASE("trainer: held-out evaluation fills metrics against the scene") {
  Fixture fx;
  fx.cfg.stages = {{2, 1, 16}};
  CameraPose cam;
  cam.azimuth_deg = 45.0;
  cam.elevation_deg = 15.0;
  fx.cfg.eval_cameras = {cam};
  fx.cfg.eval_times = {0.0, 1.0};
  ParamStore<float> ps;
  CascadeField<float> field = fx.make_field(ps);
  TrainReport rep = train(fx.cfg, fx.ds, field, ps, "", "", &fx.scene);
  REQUIRE(rep.eval.psnr.size() == 2);
  REQUIRE(rep.eval.ssim.size() == 2);
  REQUIRE(rep.eval_iou.size() == 2);
  for (double v : rep.eval.psnr) {
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
  }
  for (double v : rep.eval.ssim) CHECK(v <= 1.0);
  for (double v : rep.eval_iou) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(rep.eval.mean_psnr == doctest::Approx((rep.eval.psnr[0] + rep.eval.psnr[1]) / 2).epsilon(1e-12));
}

TEST_CASE("trainer: a short consistent fit drives the reconstruction loss down") {
  Fixture fx;
  fx.cfg.stages = {{40, 1, 16}};
  fx.cfg.icl.probability = 0.0;
  fx.cfg.normal_points = 0;  // isolate the data terms
  ParamStore<float> ps;
  CascadeField<float> field = fx.make_field(ps);
  TrainReport rep = train(fx.cfg, fx.ds, field, ps, "", "", &fx.scene);

  std::vector<double> recon;
  for (const IterRow& row : rep.rows)
    if (row.step == 'r') recon.push_back(row.comps.recon);
  REQUIRE(recon.size() == 20);
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += recon[size_t(i)] / 5;
    tail += recon[recon.size() - 1 - size_t(i)] / 5;
  }
  CHECK(tail < head);
  CHECK(tail < 0.5 * head);  // substantial progress, not noise
}

TEST_CASE("trainer: render_sequence writes the cartesian product deterministically") {
  Fixture fx;
  std::string dir = temp_dir("seq_train");
  ParamStore<float> ps;
  CascadeField<float> field = fx.make_field(ps);
  fx.cfg.stages = {{4, 1, 16}};
  TrainReport rep = train(fx.cfg, fx.ds, field, ps, dir, "", &fx.scene);
  REQUIRE(!rep.checkpoint_path.empty());

  CameraPose c1, c2;
  c1.azimuth_deg = 30.0;
  c2.azimuth_deg = 200.0;
  c2.elevation_deg = 20.0;
  std::vector<double> times = {0.0, 0.5, 1.0};

  std::string out1 = temp_dir("seq_out1");
  auto paths = render_sequence(rep.checkpoint_path, {c1, c2}, times, 24, 24, out1);
  REQUIRE(paths.size() == 6);
  for (const auto& p : paths) CHECK(std::filesystem::exists(p));
  CHECK(std::filesystem::exists(out1 + "/manifest.json"));
  std::string manifest = slurp(out1 + "/manifest.json");
  CHECK(manifest.find("render_c01_t002.png") != std::string::npos);

  std::string out2 = temp_dir("seq_out2");
  auto paths2 = render_sequence(rep.checkpoint_path, {c1, c2}, times, 24, 24, out2);
  REQUIRE(paths2.size() == 6);
  for (size_t i = 0; i < paths.size(); ++i) CHECK(slurp(paths[i]) == slurp(paths2[i]));

  // a rendered PNG decodes to the same image the field produces
  Tensorf img = read_png(paths[0]);
  CHECK(img.dim(0) == 24);
  CHECK(img.dim(1) == 24);
  CHECK(img.dim(2) == 3);

  CHECK_THROWS_AS(render_sequence(rep.checkpoint_path, {c1}, {1.5}, 24, 24, out2 + "/x"),
                  ContractError);
  CHECK_THROWS_AS(render_sequence(rep.checkpoint_path, {c1}, {-0.1}, 24, 24, out2 + "/x"),
                  ContractError);

  std::string corrupt = out2 + "/corrupt.ckpt";
  {
    std::ofstream f(corrupt, std::ios::binary);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(render_sequence(corrupt, {c1}, {0.5}, 24, 24, out2 + "/y"), IoError);

  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(out1);
  std::filesystem::remove_all(out2);
}

TEST_CASE("trainer: evaluate computes per-frame metrics and enforces alignment") {
  Rng rng(5);
  Tensorf a({16, 16, 3});
  for (float& v : a.v) v = float(rng.uniform());
  Tensorf b = a;
  std::vector<Tensorf> pred = {a, a};
  std::vector<Tensorf> gt = {b, b};
  EvalReport rep = evaluate(pred, gt);
  REQUIRE(rep.psnr.size() == 2);
  CHECK(rep.psnr[0] == 99.0);
  CHECK(rep.ssim[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rep.mean_psnr == 99.0);

  Tensorf shifted = a;
  for (float& v : shifted.v) v = v * 0.5f + 0.1f;
  Tensorf base = a;
  for (float& v : base.v) v *= 0.5f;
  EvalReport rep2 = evaluate({shifted}, {base});
  CHECK(rep2.psnr[0] == doctest::Approx(20.0).epsilon(1e-5));

  std::vector<Tensorf> short_set = {a};
  CHECK_THROWS_AS(evaluate(short_set, gt), ContractError);
  Tensorf odd({12, 16, 3});
  CHECK_THROWS_AS(evaluate({odd}, {a}), ContractError);
}
