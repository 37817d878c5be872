#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "oracles.hpp"
#include "srnr/error.hpp"
#include "srnr/experiment.hpp"
#include "srnr/nifti_io.hpp"

using namespace srnr;
using namespace srnr::experiment;
namespace fs = std::filesystem;

namespace {

SweepSpec tiny_spec() {
  SweepSpec s;
  s.sigma_levels = {0.0};
  s.n_train_volumes = 1;
  s.n_eval_volumes = 1;
  s.phantom.dims = {24, 24, 20};
  s.net_shape = {4, 4};
  s.train_cfg.patch = {12, 12, 10};
  s.train_cfg.batch_size = 2;
  s.train_cfg.epochs = 1;
  s.train_cfg.patches_per_volume = 4;
  s.master_seed = 11;
  return s;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      const auto b = testutil::read_bytes(e.path());
      out[fs::relative(e.path(), root).string()] = std::string(b.begin(), b.end());
    }
  return out;
}

}  // namespace

TEST_CASE("config round trip") {
  auto s = tiny_spec();
  s.sigma_levels = {0.0, 0.25, 1.5};
  s.k_values = {1, 3};
  s.train_cfg.precision = train::Precision::Float64;
  s.write_volumes = false;
  const auto cfg = spec_to_config(s);
  const auto back = spec_from_config(KeyValueConfig::parse(cfg.serialize()));
  CHECK(back.sigma_levels == s.sigma_levels);
  CHECK(back.k_values == s.k_values);
  CHECK(back.phantom.dims == s.phantom.dims);
  CHECK(back.train_cfg.patch == s.train_cfg.patch);
  CHECK(back.train_cfg.precision == train::Precision::Float64);
  CHECK(back.net_shape == s.net_shape);
  CHECK(back.master_seed == 11);
  CHECK(!back.write_volumes);
  CHECK(spec_to_config(back).serialize() == cfg.serialize());
  for (const auto& [k, v] : cfg.values()) CHECK(std::find(config_keys().begin(), config_keys().end(), k) != config_keys().end());
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(spec_from_config(KeyValueConfig::parse("sigma_level = 0,1\n")), Error);
  CHECK_THROWS_AS(spec_from_config(KeyValueConfig::parse("depth = many\n")), Error);
  const auto s = spec_from_config(KeyValueConfig::parse("master_seed = 5\n"));
  CHECK(s.train_cfg.seed == 5);
  CHECK(spec_from_config(KeyValueConfig::parse("master_seed = 5\ntrain_seed = 9\n")).train_cfg.seed == 9);

  auto bad = tiny_spec();
  bad.sigma_levels = {0.4, 0.8};
  CHECK_THROWS_AS(run_noise_sweep(bad), Error);
  bad.sigma_levels = {0.0, 0.8, 0.4};
  CHECK_THROWS_AS(run_noise_sweep(bad), Error);
  CHECK_THROWS_AS(run_average_study({2, 4}, tiny_spec()), Error);
  CHECK_THROWS_AS(run_average_study({1, 1}, tiny_spec()), Error);
}

TEST_CASE("table CSV round trip") {
  GroupRow r;
  r.label = "sigma_0.4";
  r.level = 0.4;
  r.group = metrics::group_metrics(std::vector<metrics::MetricsRow>{{"a", 0.1234567890123, 21.5, 0.91},
                                                                      {"b", 0.2, INFINITY, 0.95}});
  GroupRow base;
  base.label = "upsampled";
  base.level = NAN;
  base.group = metrics::group_metrics(std::vector<metrics::MetricsRow>{{"a", 0.3, 12.0, 0.5}});
  GroupRow bad;
  bad.label = "sigma_1.6";
  bad.level = 1.6;
  bad.failed = true;
  const auto text = format_table({base, r, bad});
  CHECK(text.rfind(std::string(kTableHeader) + "\n", 0) == 0);
  const auto rows = parse_table(text);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].label == "upsampled");
  CHECK(std::isnan(rows[0].level));
  CHECK(rows[1].level == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(std::abs(rows[1].mae_mean - r.group.mae.mean) < 1e-12);
  CHECK(std::abs(rows[1].mae_std - r.group.mae.std_dev) < 1e-12);
  CHECK(std::abs(rows[1].psnr_mean - r.group.psnr_db.mean) < 1e-12);
  CHECK(rows[1].psnr_finite == 1);
  CHECK(std::abs(rows[1].ssim_mean - r.group.ssim.mean) < 1e-12);
  CHECK(rows[1].status == "ok");
  CHECK(rows[2].status == "failed");
  CHECK(format_table({}) == std::string(kTableHeader) + "\n");
  CHECK(parse_table(format_table({})).empty());
}

TEST_CASE("repetition averages") {
  const auto subj = make_subjects(tiny_spec(), "eval", 1).front();
  CHECK(repetition_reference(subj.hr, subj.mask, 0.0, 3, 10) == subj.hr);
  CHECK(repetition_reference(subj.hr, subj.mask, 1.0, 3, 4) == repetition_reference(subj.hr, subj.mask, 1.0, 3, 4));

  // Residual noise of a K-average shrinks as 1/sqrt(K).
  const auto resid_std = [&](int k) {
    const auto avg = repetition_reference(subj.hr, subj.mask, 1.0, 21, k);
    std::vector<double> d;
    for (std::size_t i = 0; i < avg.size(); ++i)
      if (subj.mask[i]) d.push_back(avg[i] - subj.hr[i]);
    return oracle::two_pass(d).sample_std;
  };
  const double s1 = resid_std(1);
  for (int k : {4, 10}) CHECK(resid_std(k) * std::sqrt(double(k)) / s1 == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("level noise seeds depend on the value only") {
  CHECK(level_noise_seed(1, 0.4) == level_noise_seed(1, 0.4));
  CHECK(level_noise_seed(1, 0.4) != level_noise_seed(1, 0.8));
  CHECK(level_noise_seed(1, 0.4) != level_noise_seed(2, 0.4));
}

TEST_CASE("degenerate noise sweep") {
  const auto rep = run_noise_sweep(tiny_spec());
  CHECK(rep.study == "noise");
  REQUIRE(rep.table_d.size() == 2);
  CHECK(rep.table_d[0].label == "upsampled");
  CHECK(rep.table_d[1].label == "clean");
  CHECK(rep.table_e.empty());
  CHECK(rep.failures.empty());
  CHECK(rep.losses.size() == 1);

  testutil::TempDir dir("sweep");
  emit_report(rep, dir.path());
  CHECK(testutil::read_text(dir.path() / "table_e.csv") == std::string(kTableHeader) + "\n");
  CHECK(parse_table(testutil::read_text(dir.path() / "table_d.csv")).size() == 2);
  const auto curves = testutil::read_text(dir.path() / "curves.csv");
  CHECK(curves.rfind(std::string(kCurvesHeader) + "\n", 0) == 0);
  CHECK(fs::exists(dir.path() / "run_config.txt"));
  CHECK(fs::exists(dir.path() / "volumes" / "clean_eval_0_diff.nii"));
  CHECK(fs::exists(dir.path() / "volumes" / "upsampled_eval_0_diff.nii"));
}

TEST_CASE("noise sweep compares against the clean model") {
  auto s = tiny_spec();
  s.sigma_levels = {0.0, 0.5};
  s.write_volumes = false;
  const auto rep = run_noise_sweep(s);
  REQUIRE(rep.table_d.size() == 3);
  REQUIRE(rep.table_e.size() == 1);
  CHECK(rep.table_e[0].label == "sigma_0.5");
  CHECK(rep.table_e[0].level == 0.5);
  CHECK(rep.volumes.empty());

  const auto again = run_noise_sweep(s);
  CHECK(format_table(again.table_d) == format_table(rep.table_d));
  CHECK(format_table(again.table_e) == format_table(rep.table_e));
}

TEST_CASE("average study without noise trains identical models") {
  auto s = tiny_spec();
  s.average_sigma_rel = 0.0;
  const auto rep = run_average_study({1, 3}, s);
  CHECK(rep.study == "average");
  REQUIRE(rep.table_d.size() == 3);
  CHECK(rep.table_d[1].label == "k_1");
  CHECK(rep.table_d[1].group.mae.mean == rep.table_d[2].group.mae.mean);
  REQUIRE(rep.table_e.size() == 1);
  CHECK(rep.table_e[0].group.mae.mean == 0.0);
  CHECK(std::isinf(rep.table_e[0].group.psnr_db.mean));
  CHECK(rep.table_e[0].group.ssim.mean == 1.0);
  // Identical models give identical difference volumes, and their difference is all zeros.
  const NamedVolume* k1 = nullptr;
  const NamedVolume* k3 = nullptr;
  for (const auto& v : rep.volumes) {
    if (v.name == "k_1_eval_0_diff.nii") k1 = &v;
    if (v.name == "k_3_eval_0_diff.nii") k3 = &v;
  }
  REQUIRE(k1);
  REQUIRE(k3);
  const auto diff = subtract(k1->volume, k3->volume);
  for (double x : diff.data()) CHECK(x == 0.0);
}

TEST_CASE("reports are byte-stable") {
  testutil::TempDir a("repa"), b("repb");
  emit_report(run_noise_sweep(tiny_spec()), a.path());
  emit_report(run_noise_sweep(tiny_spec()), b.path());
  const auto ta = read_tree(a.path()), tb = read_tree(b.path());
  CHECK(ta.size() == 6);  // four text files and two difference volumes
  CHECK(ta == tb);
}
