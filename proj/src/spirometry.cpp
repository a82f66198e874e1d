#include "pulmo/spirometry.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "pulmo/errors.hpp"

namespace pulmo::spiro {

using nlohmann::json;

const char* to_string(Sex s) { return s == Sex::Male ? "male" : "female"; }

const char* to_string(SpiroClass c) {
  return c == SpiroClass::Normal ? "normal" : "abnormal";
}

Sex sex_from_string(const std::string& s) {
  if (s == "male" || s == "m") return Sex::Male;
  if (s == "female" || s == "f") return Sex::Female;
  throw ConfigError("spirometry: unknown sex '" + s + "'");
}

namespace {

std::array<double, 4> parse_coeffs(const json& j, const std::string& field,
                                   std::size_t row) {
  if (!j.contains(field) || !j[field].is_array() || j[field].size() != 4) {
    throw ConfigError("spirometry: group " + std::to_string(row) +
                      " field '" + field + "' must be an array of 4 numbers");
  }
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = j[field][i].get<double>();
  return out;
}

}  // namespace

ReferenceCoefficients ReferenceCoefficients::load(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("spirometry: cannot open coefficient file " +
                      path.string());
  }
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw ConfigError("spirometry: bad coefficient JSON in " + path.string() +
                      ": " + e.what());
  }
  if (!root.contains("groups") || !root["groups"].is_array()) {
    throw ConfigError("spirometry: coefficient file needs a 'groups' array");
  }
  std::vector<GroupCoefficients> gs;
  std::size_t row = 0;
  for (const auto& g : root["groups"]) {
    GroupCoefficients gc;
    if (!g.contains("sex") || !g.contains("group_id")) {
      throw ConfigError("spirometry: group " + std::to_string(row) +
                        " missing sex/group_id");
    }
    gc.sex = sex_from_string(g["sex"].get<std::string>());
    gc.group_id = g["group_id"].get<std::string>();
    gc.fev1 = parse_coeffs(g, "fev1", row);
    gc.fvc = parse_coeffs(g, "fvc", row);
    gc.pef = parse_coeffs(g, "pef", row);
    gs.push_back(std::move(gc));
    ++row;
  }
  return from_groups(std::move(gs));
}

ReferenceCoefficients ReferenceCoefficients::from_groups(
    std::vector<GroupCoefficients> gs) {
  if (gs.empty()) {
    throw ConfigError("spirometry: coefficient table is empty");
  }
  for (std::size_t i = 0; i < gs.size(); ++i) {
    for (std::size_t j = i + 1; j < gs.size(); ++j) {
      if (gs[i].sex == gs[j].sex && gs[i].group_id == gs[j].group_id) {
        throw ConfigError("spirometry: duplicate group (" +
                          std::string(to_string(gs[i].sex)) + ", " +
                          gs[i].group_id + ")");
      }
      // PEF model is per sex; conflicting rows would make lookups ambiguous.
      if (gs[i].sex == gs[j].sex && gs[i].pef != gs[j].pef) {
        throw ConfigError(
            "spirometry: PEF coefficients differ between groups of sex " +
            std::string(to_string(gs[i].sex)));
      }
    }
  }
  ReferenceCoefficients c;
  c.groups_ = std::move(gs);
  return c;
}

void ReferenceCoefficients::save(const std::filesystem::path& path) const {
  json root;
  root["groups"] = json::array();
  for (const auto& g : groups_) {
    json jg;
    jg["sex"] = to_string(g.sex);
    jg["group_id"] = g.group_id;
    jg["fev1"] = g.fev1;
    jg["fvc"] = g.fvc;
    jg["pef"] = g.pef;
    root["groups"].push_back(std::move(jg));
  }
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("spirometry: cannot write coefficient file " +
                      path.string());
  }
  out << root.dump(2) << '\n';
}

const GroupCoefficients& ReferenceCoefficients::group(
    Sex sex, const std::string& group_id) const {
  for (const auto& g : groups_) {
    if (g.sex == sex && g.group_id == group_id) return g;
  }
  throw ConfigError("spirometry: no coefficients for group (" +
                    std::string(to_string(sex)) + ", " + group_id + ")");
}

const std::array<double, 4>& ReferenceCoefficients::pef_for_sex(
    Sex sex) const {
  for (const auto& g : groups_) {
    if (g.sex == sex) return g.pef;
  }
  throw ConfigError("spirometry: no PEF coefficients for sex " +
                    std::string(to_string(sex)));
}

namespace {

void check_inputs(double age, double height_cm, const char* op) {
  if (!(age > 0.0) || !std::isfinite(age) || !std::isfinite(height_cm)) {
    throw DomainError(std::string(op) + ": age/height must be positive finite");
  }
  if (height_cm < 100.0 || height_cm > 220.0) {
    throw DomainError(std::string(op) + ": height " +
                      std::to_string(height_cm) +
                      " cm outside supported range [100,220]");
  }
  if (age < 15.0 || age > 75.0) {
    std::cerr << "warning: " << op << ": age " << age
              << " outside the reference range [15,75]\n";
  }
}

double poly(const std::array<double, 4>& b, double age, double h) {
  return b[0] + b[1] * age + b[2] * age * age + b[3] * h * h;
}

}  // namespace

std::pair<double, double> predicted_fev1_fvc(double age_years,
                                             double height_cm, Sex sex,
                                             const std::string& group_id,
                                             const ReferenceCoefficients& c) {
  check_inputs(age_years, height_cm, "predicted_fev1_fvc");
  const GroupCoefficients& g = c.group(sex, group_id);
  const double fev1 = poly(g.fev1, age_years, height_cm);
  const double fvc = poly(g.fvc, age_years, height_cm);
  if (fev1 <= 0.0 || fvc <= 0.0) {
    throw DomainError("predicted_fev1_fvc: non-positive prediction (fev1=" +
                      std::to_string(fev1) + ", fvc=" + std::to_string(fvc) +
                      ") for group " + group_id);
  }
  return {fev1, fvc};
}

double predicted_pef(double age_years, double height_cm, Sex sex,
                     const ReferenceCoefficients& c) {
  check_inputs(age_years, height_cm, "predicted_pef");
  const std::array<double, 4>& p = c.pef_for_sex(sex);
  return std::exp(p[0] + p[1] * std::log(age_years) + p[2] * age_years +
                  p[3] / height_cm);
}

SpiroLabel classify(double measured_fev1, double measured_fvc,
                    double predicted_fev1, double predicted_fvc) {
  for (double v : {measured_fev1, measured_fvc, predicted_fev1,
                   predicted_fvc}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError("classify: volumes must be positive finite");
    }
  }
  const double measured_ratio = measured_fev1 / measured_fvc;
  const double predicted_ratio = predicted_fev1 / predicted_fvc;
  const double percent = 100.0 * measured_ratio / predicted_ratio;
  SpiroLabel label;
  label.ratio_percent = static_cast<float>(percent);
  label.cls = percent >= 70.0 ? SpiroClass::Normal : SpiroClass::Abnormal;
  return label;
}

}  // namespace pulmo::spiro
