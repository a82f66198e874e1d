#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pulmo/rng.hpp"
#include "pulmo/spirometry.hpp"
#include "pulmo/tensor.hpp"

namespace pulmo::data {

enum class Modality : std::uint8_t { Thermal = 0, Rgb = 1 };
enum class Session : std::uint8_t { Rest = 0, PostExercise = 1 };

const char* to_string(Modality m);
const char* to_string(Session s);
Modality modality_from_string(const std::string& s);
Session session_from_string(const std::string& s);

// Per-subject covariates. Sex and demographic group ride along because the
// reference equations are keyed on them.
struct MetadataRecord {
  std::string subject_id;
  spiro::Sex sex = spiro::Sex::Male;
  std::string group_id;
  double age = 0.0;                       // years
  double height_cm = 0.0;
  double weight_kg = 0.0;
  double smoking_duration_years = 0.0;
  bool athlete = false;
  bool seasonal_cough = false;
  bool lung_past_problems = false;
  bool lung_genetic_problems = false;
};

// One breathing-cycle clip. Frames stay on disk until load_clip is called.
struct ClipRecord {
  std::string subject_id;
  Modality modality = Modality::Thermal;
  Session session = Session::Rest;
  std::filesystem::path clip_path;
  double measured_pef = 0.0;   // L/min
  double measured_fev1 = 0.0;  // L
  double measured_fvc = 0.0;   // L
};

struct Dataset {
  std::filesystem::path root;
  std::vector<ClipRecord> clips;
  std::vector<MetadataRecord> metadata;

  const MetadataRecord& record_for(const std::string& subject_id) const;
  std::vector<std::string> subject_ids() const;
};

// Subject-disjoint fold assignment.
struct FoldSplit {
  int k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, int> fold_of;

  std::vector<std::string> test_subjects(int fold) const;
  std::vector<std::string> train_subjects(int fold) const;
  void save(const std::filesystem::path& path) const;
  static FoldSplit load(const std::filesystem::path& path);
};

// Clip geometry pinned by the on-disk format.
inline constexpr std::size_t kClipFrames = 30;
inline constexpr std::size_t kClipHeight = 224;
inline constexpr std::size_t kClipWidth = 224;

// Reads <dir>/manifest.csv and <dir>/metadata.json, checking referential
// integrity (every clip row must name a known subject and an existing file).
Dataset load_manifest(const std::filesystem::path& dir);

// PFCL clip container: magic "PFCL", version u16, modality u8, dims
// [T,C,H,W] u32 LE, then T*C*H*W little-endian f32. T=30, H=W=224 enforced.
Tensor load_clip(const std::filesystem::path& path);
void save_clip(const std::filesystem::path& path, const Tensor& frames,
               Modality modality);

// Spatial + temporal augmentation on a normalized [T,C,H,W] clip. Each
// transform fires with probability 1/2: horizontal flip, crop-and-resize
// (200x200 -> 224x224), circular temporal shift of +-{1,2} frames, and
// photometric jitter (RGB: brightness scale U[0.8,1.2]; thermal: additive
// Gaussian sigma 0.02). Output is clamped back to [0,1].
Tensor augment(const Tensor& clip, Modality modality, Rng& rng);

// Stratified subject-level k-fold split; per-fold class counts stay within
// one subject of perfect proportion. Deterministic given seed.
FoldSplit subject_kfold(const std::vector<std::string>& subjects,
                        const std::map<std::string, spiro::SpiroClass>& labels,
                        int k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic breathing-video generator. Renders a Gaussian exhalation plume
// whose peak amplitude encodes PEF (linear map onto [200,650] L/min) and
// whose duty cycle encodes the FEV1/FVC percent in [50,95]. Fixed render
// parameters live here so generated numbers stay stable across versions.
// ---------------------------------------------------------------------------

struct SynthParams {
  int n_subjects = 12;
  int cycles_per_subject = 4;
  std::uint64_t seed = 0;
  Modality modality = Modality::Thermal;

  // declared maps (endpoints are part of the generator contract)
  double pef_min = 200.0, pef_max = 650.0;
  double amp_min = 0.35, amp_max = 0.95;
  double ratio_min = 50.0, ratio_max = 95.0;
  double duty_min = 0.25, duty_max = 0.80;

  // render constants
  double plume_sigma_px = 28.0;
  double noise_sigma_thermal = 0.02;
  double noise_sigma_rgb = 0.05;
  double pef_cycle_jitter = 8.0;  // per-clip L/min noise on the PEF truth
};

struct SynthTruth {
  std::string subject_id;
  double pef = 0.0;            // subject-level truth
  double ratio_percent = 0.0;  // classify() output for this subject
  spiro::SpiroClass label = spiro::SpiroClass::Abnormal;
};

// Writes manifest.csv, metadata.json, coefficients.json and clips/ under
// out_dir; returns the per-subject ground truth actually used.
std::vector<SynthTruth> synth_generate(const SynthParams& params,
                                       const std::filesystem::path& out_dir);

// amplitude/duty maps exposed for tests
double synth_amp_for_pef(const SynthParams& p, double pef);
double synth_duty_for_ratio(const SynthParams& p, double ratio_percent);

}  // namespace pulmo::data
