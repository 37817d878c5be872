#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>

#include "helpers.hpp"
#include "srnr/cli.hpp"
#include "srnr/nifti_io.hpp"
#include "srnr/tensor_nn.hpp"

namespace fs = std::filesystem;
using srnr::cli::run;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "srnr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> simulate_args(const fs::path& out) {
  return {"simulate", "--phantom", "--dims", "24,24,20", "--seed", "4", "--sigma-rel", "0.5", "--out", out.string()};
}

}  // namespace

TEST_CASE("help exits 0") {
  CHECK(call({"--help"}).code == 0);
  for (const char* sub : {"simulate", "train", "infer", "evaluate", "sweep"}) {
    const auto r = call({sub, "--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("--") != std::string::npos);
  }
}

TEST_CASE("bad arguments exit 2") {
  testutil::TempDir dir("cli-bad");
  CHECK(call({}).code == 2);
  CHECK(call({"frobnicate"}).code == 2);
  CHECK(call({"simulate", "--out", dir.path().string()}).code == 2);
  CHECK(call({"simulate", "--phantom", "--input", "x.nii", "--out", dir.path().string()}).code == 2);
  CHECK(call({"simulate", "--phantom", "--sigma-rel", "-1", "--out", dir.path().string()}).code == 2);
  CHECK(call({"simulate", "--phantom", "--dims", "8,8", "--out", dir.path().string()}).code == 2);
  CHECK(call({"simulate", "--phantom", "--factor", "0", "--out", dir.path().string()}).code == 2);
  CHECK(call({"train", "--out", "x.ckpt"}).code == 2);
  CHECK(call({"sweep", "--study", "other"}).code == 2);
  CHECK(call({"evaluate", "--a", "x.nii"}).code == 2);
  // Nothing was written by the rejected commands.
  CHECK(fs::is_empty(dir.path()));
}

TEST_CASE("missing inputs exit 3") {
  testutil::TempDir dir("cli-missing");
  const auto r = call({"simulate", "--input", "/nonexistent/in.nii", "--out", dir.path().string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("/nonexistent/in.nii") != std::string::npos);
  CHECK(call({"evaluate", "--a", "/nonexistent/a.nii", "--b", "/nonexistent/b.nii"}).code == 3);
  CHECK(call({"sweep", "--config", "/nonexistent/c.cfg", "--out", (dir.path() / "r").string()}).code == 3);
  CHECK(call({"infer", "--checkpoint", "/nonexistent/c", "--input", "i.nii", "--out", "o.nii"}).code == 3);

  const auto junk = dir.path() / "junk.nii";
  testutil::write_bytes(junk, std::vector<std::uint8_t>(400, 7));
  CHECK(call({"evaluate", "--a", junk.string(), "--b", junk.string()}).code == 3);
}

TEST_CASE("simulate writes a deterministic triplet") {
  testutil::TempDir a("cli-sim-a"), b("cli-sim-b");
  REQUIRE(call(simulate_args(a.path())).code == 0);
  REQUIRE(call(simulate_args(b.path())).code == 0);
  for (const char* f : {"ground_truth.nii", "mask.nii", "low_res.nii", "upsampled.nii", "noisy_reference.nii"}) {
    REQUIRE(fs::exists(a.path() / f));
    CHECK(testutil::read_bytes(a.path() / f) == testutil::read_bytes(b.path() / f));
  }
  const auto gt = srnr::nifti::read_nifti(a.path() / "ground_truth.nii");
  const auto low = srnr::nifti::read_nifti(a.path() / "low_res.nii");
  const auto up = srnr::nifti::read_nifti(a.path() / "upsampled.nii");
  CHECK(gt.dims() == srnr::Dims{24, 24, 20});
  CHECK(low.dims() == srnr::Dims{24, 24, 4});
  CHECK(up.dims() == gt.dims());
  CHECK(low.spacing()[2] == doctest::Approx(5 * gt.spacing()[2]));

  // --input reproduces the same degraded volumes from the ground truth.
  testutil::TempDir c("cli-sim-c");
  REQUIRE(call({"simulate", "--input", (a.path() / "ground_truth.nii").string(), "--mask",
                (a.path() / "mask.nii").string(), "--out", c.path().string()})
              .code == 0);
  CHECK(srnr::nifti::read_nifti(c.path() / "low_res.nii").data().size() == low.size());
}

TEST_CASE("evaluate, train and infer") {
  testutil::TempDir dir("cli-run");
  const auto sim = dir.path() / "sim";
  REQUIRE(call(simulate_args(sim)).code == 0);
  const auto gt = (sim / "ground_truth.nii").string();
  const auto mask = (sim / "mask.nii").string();

  const auto same = call({"evaluate", "--a", gt, "--b", gt, "--mask", mask, "--label", "same"});
  REQUIRE(same.code == 0);
  CHECK(same.out == "same,0,inf,1\n");

  const auto ck0 = dir.path() / "init.ckpt";
  REQUIRE(call({"train", "--hr", gt, "--mask", mask, "--epochs", "0", "--depth", "4", "--width", "4", "--seed", "3",
                "--out", ck0.string()})
              .code == 0);
  const auto loaded = srnr::nn::load_checkpoint(ck0);
  CHECK(loaded.seed == 3);
  CHECK(loaded.net == srnr::nn::round_to_float(srnr::nn::init_params({4, 4}, 3)));
  CHECK(testutil::read_text(ck0.string() + ".loss.csv") == "epoch,mean_train_loss,mean_val_loss\n");
  const auto run_cfg = testutil::read_text(ck0.string() + ".config.txt");
  CHECK(run_cfg.find("epochs = 0") != std::string::npos);
  CHECK(run_cfg.find("hr_0 = " + gt) != std::string::npos);

  const auto ck1 = dir.path() / "trained.ckpt";
  REQUIRE(call({"train", "--hr", gt, "--mask", mask, "--sigma-rel", "0.5", "--epochs", "1", "--depth", "4", "--width",
                "4", "--patch", "12,12,10", "--batch", "2", "--patches-per-volume", "2", "--out", ck1.string()})
              .code == 0);
  CHECK(testutil::read_text(ck1.string() + ".loss.csv").rfind("epoch,mean_train_loss,mean_val_loss\n1,", 0) == 0);
  REQUIRE(call({"train", "--hr", gt, "--reference", (sim / "noisy_reference.nii").string(), "--epochs", "1",
                "--depth", "4", "--width", "4", "--patch", "12", "--batch", "1", "--patches-per-volume", "2",
                "--out", (dir.path() / "ref.ckpt").string()})
              .code == 0);

  const auto out = dir.path() / "pred.nii";
  REQUIRE(call({"infer", "--checkpoint", ck1.string(), "--input", (sim / "low_res.nii").string(), "--out",
                out.string()})
              .code == 0);
  CHECK(srnr::nifti::read_nifti(out).dims() == srnr::Dims{24, 24, 20});
  const auto out2 = dir.path() / "pred_up.nii";
  REQUIRE(call({"infer", "--checkpoint", ck1.string(), "--input", (sim / "upsampled.nii").string(), "--upsampled",
                "--out", out2.string()})
              .code == 0);
  const auto ev = call({"evaluate", "--a", out.string(), "--b", out2.string()});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.rfind("pred,", 0) == 0);

  // A corrupt checkpoint is rejected as an unsupported format.
  const auto bad = dir.path() / "bad.ckpt";
  testutil::write_bytes(bad, std::vector<std::uint8_t>{'S', 'R', 'N', 'R', 'X'});
  CHECK(call({"infer", "--checkpoint", bad.string(), "--input", (sim / "low_res.nii").string(), "--out",
              out.string()})
            .code == 3);
}

TEST_CASE("sweep writes a report directory") {
  testutil::TempDir dir("cli-sweep");
  const auto cfg = dir.path() / "tiny.cfg";
  testutil::write_bytes(cfg, [] {
    const std::string t =
        "sigma_levels = 0, 0.5\nn_train = 1\nn_eval = 1\ndims = 24, 24, 20\ndepth = 4\nwidth = 4\n"
        "patch = 12, 12, 10\nbatch_size = 2\nepochs = 1\npatches_per_volume = 2\n";
    return std::vector<std::uint8_t>(t.begin(), t.end());
  }());
  const auto rep = dir.path() / "report";
  REQUIRE(call({"sweep", "--config", cfg.string(), "--out", rep.string(), "--seed", "5"}).code == 0);
  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(rep)) names.push_back(fs::relative(e.path(), rep).string());
  std::sort(names.begin(), names.end());
  CHECK(names == std::vector<std::string>{"curves.csv", "run_config.txt", "table_d.csv", "table_e.csv", "volumes",
                                          "volumes/clean_eval_0_diff.nii", "volumes/sigma_0.5_eval_0_diff.nii",
                                          "volumes/upsampled_eval_0_diff.nii"});
  CHECK(testutil::read_text(rep / "run_config.txt").find("master_seed = 5") != std::string::npos);

  testutil::write_bytes(cfg, std::vector<std::uint8_t>{'b', 'o', 'g', 'u', 's', ' ', '=', ' ', '1', '\n'});
  CHECK(call({"sweep", "--config", cfg.string(), "--out", rep.string()}).code == 2);
}
