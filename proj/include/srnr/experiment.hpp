#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "srnr/config.hpp"
#include "srnr/degrade.hpp"
#include "srnr/metrics.hpp"
#include "srnr/tensor_nn.hpp"
#include "srnr/train.hpp"
#include "srnr/volume.hpp"

namespace srnr::experiment {

struct SweepSpec {
  std::vector<double> sigma_levels{0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6};
  std::size_t n_train_volumes = 4;
  std::size_t n_eval_volumes = 4;
  PhantomSpec phantom;  // seed is ignored; every phantom gets a derived seed
  DegradeSpec dspec;
  nn::NetShape net_shape{6, 16};
  train::TrainConfig train_cfg;
  std::uint64_t master_seed = 2024;
  // Repetition-averaging study.
  std::vector<int> k_values{1, 10};
  double average_sigma_rel = 1.0;
  // Write per-subject difference volumes into the report.
  bool write_volumes = true;

  void validate_sweep() const;
  void validate_average() const;
};

// Reads the documented keys (listed in README.md); missing keys keep defaults.
SweepSpec spec_from_config(const KeyValueConfig& cfg);
KeyValueConfig spec_to_config(const SweepSpec& spec);
const std::vector<std::string>& config_keys();

struct GroupRow {
  std::string label;
  double level = 0.0;  // sigma_rel, or K for the averaging study; NaN for the baseline
  metrics::GroupMetrics group;
  std::vector<metrics::MetricsRow> subjects;  // labels are eval subject ids
  bool failed = false;
  std::string failure;
};

struct LossCurve {
  double level = 0.0;
  std::vector<train::EpochLoss> epochs;
};

struct NamedVolume {
  std::string name;  // file name without directory, e.g. "sigma_0.4_eval_0_diff.nii"
  Volume3D volume;
};

struct SweepReport {
  std::string study;  // "noise" or "average"
  std::vector<GroupRow> table_d;  // vs ground truth, baseline first
  std::vector<GroupRow> table_e;  // vs the reference model's outputs
  std::vector<LossCurve> losses;
  std::vector<NamedVolume> volumes;
  std::string run_config;  // serialized spec
  std::uint64_t config_hash = 0;
  std::vector<std::string> failures;
};

// Ground-truth phantom pool: normalized, cropped to the degrade factor.
struct Subject {
  Volume3D hr;
  BrainMask mask;
  std::uint64_t seed = 0;
};

std::vector<Subject> make_subjects(const SweepSpec& spec, const std::string& role, std::size_t count);

// Noise seed for a sigma level; depends on the sigma value, not its position.
std::uint64_t level_noise_seed(std::uint64_t master_seed, double sigma_rel);

// Mean of the first k of a fixed sequence of noisy repetitions of hr.
Volume3D repetition_reference(const Volume3D& hr, const BrainMask& mask, double sigma_rel, std::uint64_t seed, int k);

SweepReport run_noise_sweep(const SweepSpec& spec);
SweepReport run_average_study(const std::vector<int>& k_values, const SweepSpec& spec);

// Writes table_d.csv, table_e.csv, curves.csv, run_config.txt and volumes/.
void emit_report(const SweepReport& report, const std::filesystem::path& out_dir);

inline constexpr const char* kTableHeader =
    "label,level,n,mae_mean,mae_std,psnr_db_mean,psnr_db_std,psnr_finite,ssim_mean,ssim_std,status";
inline constexpr const char* kCurvesHeader = "table,level,metric,value,subject";

std::string format_table(const std::vector<GroupRow>& rows);

// Parsed table row (for tooling and tests).
struct TableRow {
  std::string label;
  double level = 0.0;
  std::size_t n = 0;
  double mae_mean = 0.0, mae_std = 0.0;
  double psnr_mean = 0.0, psnr_std = 0.0;
  std::size_t psnr_finite = 0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  std::string status;
};
std::vector<TableRow> parse_table(const std::string& csv);

}  // namespace srnr::experiment
