#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace pulmo::spiro {

enum class Sex : std::uint8_t { Male = 0, Female = 1 };

enum class SpiroClass : std::uint8_t { Normal = 0, Abnormal = 1 };

struct SpiroLabel {
  SpiroClass cls = SpiroClass::Abnormal;
  float ratio_percent = 0.0f;  // measured ratio over predicted ratio, in %
};

const char* to_string(Sex s);
const char* to_string(SpiroClass c);
Sex sex_from_string(const std::string& s);

// One demographic group's reference-equation coefficients.
//   FEV1/FVC (L):  b0 + b1*age + b2*age^2 + b3*height^2   (age yr, height cm)
//   PEF (L/min):   exp(c0 + c1*ln(age) + c2*age + c3/height)
struct GroupCoefficients {
  Sex sex = Sex::Male;
  std::string group_id;
  std::array<double, 4> fev1{};
  std::array<double, 4> fvc{};
  std::array<double, 4> pef{};
};

// Coefficient table loaded from a JSON config file. The values themselves are
// runtime data; nothing clinical is hardcoded in this library.
class ReferenceCoefficients {
 public:
  static ReferenceCoefficients load(const std::filesystem::path& path);
  static ReferenceCoefficients from_groups(std::vector<GroupCoefficients> gs);
  void save(const std::filesystem::path& path) const;

  // ConfigError if the (sex, group) pair is not in the table.
  const GroupCoefficients& group(Sex sex, const std::string& group_id) const;
  // PEF coefficients are per sex; the loader enforces that every group of a
  // sex carries the same PEF row, so this lookup is well defined.
  const std::array<double, 4>& pef_for_sex(Sex sex) const;

  const std::vector<GroupCoefficients>& groups() const { return groups_; }

 private:
  std::vector<GroupCoefficients> groups_;
};

// Predicted FEV1 and FVC in liters. Hard height bounds [100,220] cm; ages
// outside [15,75] only warn (stderr). Non-positive predictions are domain
// errors.
std::pair<double, double> predicted_fev1_fvc(double age_years,
                                             double height_cm, Sex sex,
                                             const std::string& group_id,
                                             const ReferenceCoefficients& c);

// Predicted PEF in L/min; positive by construction of the log-linear model.
double predicted_pef(double age_years, double height_cm, Sex sex,
                     const ReferenceCoefficients& c);

// ratio_percent = 100 * (measured FEV1/FVC) / (predicted FEV1/FVC).
// Normal iff ratio_percent >= 70. All inputs must be positive.
SpiroLabel classify(double measured_fev1, double measured_fvc,
                    double predicted_fev1, double predicted_fvc);

}  // namespace pulmo::spiro
