#pragma once

// Experiment configuration: JSON round trip, validation with field-precise
// messages, and polynomial models declared inline.

#include "hypodens/core.hpp"
#include "hypodens/decomp.hpp"
#include "hypodens/density.hpp"
#include "hypodens/model.hpp"
#include "hypodens/paths.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace hypodens {

using Json = nlohmann::json;

/// Inline polynomial model:
///   {"n": 3, "d": 2, "name": "...",
///    "sigma": [[ [ {"c": 1.0, "x": [0,0,0], "t": 0}, ... ], ...components ], ...fields],
///    "b": [ [terms], ...components ]}
/// "x" lists the exponent of every state coordinate; "t" defaults to 0; "b" may be omitted.
inline std::shared_ptr<PolynomialModel> polynomial_from_json(const Json& j) {
  auto fail = [](const std::string& where, const std::string& what) {
    return ConfigError("model." + where + ": " + what);
  };
  if (!j.is_object()) throw fail("", "inline model must be an object");
  if (!j.contains("n") || !j["n"].is_number_integer()) throw fail("n", "required positive integer");
  if (!j.contains("d") || !j["d"].is_number_integer()) throw fail("d", "required positive integer");
  const int n = j["n"].get<int>(), d = j["d"].get<int>();
  if (n <= 0) throw fail("n", "must be positive");
  if (d <= 0) throw fail("d", "must be positive");
  auto read_field = [&](const Json& f, const std::string& where) {
    if (!f.is_array() || static_cast<int>(f.size()) != n) throw fail(where, "needs exactly n components");
    PolyField out(n);
    for (int a = 0; a < n; ++a) {
      const std::string wa = where + "[" + std::to_string(a) + "]";
      if (!f[a].is_array()) throw fail(wa, "component must be a list of terms");
      for (std::size_t k = 0; k < f[a].size(); ++k) {
        const Json& term = f[a][k];
        const std::string wt = wa + "[" + std::to_string(k) + "]";
        if (!term.is_object() || !term.contains("c") || !term["c"].is_number())
          throw fail(wt, "term needs numeric \"c\"");
        Monomial mo;
        mo.coef = term["c"].get<double>();
        mo.t_power = term.value("t", 0);
        if (mo.t_power < 0) throw fail(wt + ".t", "must be non-negative");
        if (term.contains("x")) {
          const Json& x = term["x"];
          if (!x.is_array() || static_cast<int>(x.size()) != n) throw fail(wt + ".x", "needs n exponents");
          for (int v = 0; v < n; ++v) {
            if (!x[v].is_number_integer() || x[v].get<int>() < 0) throw fail(wt + ".x", "exponents must be integers >= 0");
            if (x[v].get<int>() > 0) mo.x_powers.emplace_back(v, x[v].get<int>());
          }
        }
        out[a].push_back(std::move(mo));
      }
    }
    return out;
  };
  if (!j.contains("sigma") || !j["sigma"].is_array() || static_cast<int>(j["sigma"].size()) != d)
    throw fail("sigma", "needs exactly d fields");
  std::vector<PolyField> sigma;
  for (int i = 0; i < d; ++i) sigma.push_back(read_field(j["sigma"][i], "sigma[" + std::to_string(i) + "]"));
  PolyField b = j.contains("b") ? read_field(j["b"], "b") : PolyField(n);
  return std::make_shared<PolynomialModel>(n, d, std::move(sigma), std::move(b), j.value("name", "inline"));
}

inline Json polynomial_to_json(const PolynomialModel& m) {
  auto field = [&](const PolyField& f) {
    Json out = Json::array();
    for (const auto& comp : f) {
      Json terms = Json::array();
      for (const auto& mo : comp) {
        std::vector<int> x(m.n(), 0);
        for (const auto& [v, e] : mo.x_powers) x[v] += e;
        terms.push_back({{"c", mo.coef}, {"x", x}, {"t", mo.t_power}});
      }
      out.push_back(terms);
    }
    return out;
  };
  Json j{{"n", m.n()}, {"d", m.d()}, {"name", m.name()}};
  j["sigma"] = Json::array();
  for (const auto& f : m.sigma_fields()) j["sigma"].push_back(field(f));
  j["b"] = field(m.drift_field());
  return j;
}

struct ExperimentConfig {
  std::string model = "heisenberg";
  std::optional<Json> model_spec;  // inline polynomial model, overrides `model`
  std::vector<double> x0;          // empty: origin
  std::vector<double> delta_grid{0.02, 0.04, 0.08, 0.12, 0.2};
  std::size_t n_paths = 200000;
  int steps_per_sub = 256;
  std::uint64_t seed = 1;
  std::vector<double> eps_grid{0.1, 0.2, 0.3, 0.4};
  double rho = 4.0;
  double r = 0.5;
  double p_exponent = 4.0;
  Centering centering = Centering::X0PlusBDelta;
  std::string output_dir = "out";
  VConvention v_convention = VConvention::Weighted;
  QpConvention qp_convention = QpConvention::PBlock;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

inline const char* to_string(VConvention v) { return v == VConvention::Weighted ? "weighted" : "bare"; }
inline const char* to_string(QpConvention q) { return q == QpConvention::PBlock ? "p-block" : "i-block"; }

inline Centering parse_centering(const std::string& s) {
  if (s == "x0") return Centering::X0;
  if (s == "x0+bdelta") return Centering::X0PlusBDelta;
  throw ConfigError("centering: expected x0 or x0+bdelta, got '" + s + "'");
}
inline VConvention parse_v_convention(const std::string& s) {
  if (s == "weighted") return VConvention::Weighted;
  if (s == "bare") return VConvention::Bare;
  throw ConfigError("convention_v: expected weighted or bare, got '" + s + "'");
}
inline QpConvention parse_qp_convention(const std::string& s) {
  if (s == "p-block") return QpConvention::PBlock;
  if (s == "i-block") return QpConvention::IBlock;
  throw ConfigError("convention_qp: expected p-block or i-block, got '" + s + "'");
}

/// Throws ConfigError naming the offending field.
inline void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ConfigError(field + ": " + what);
  };
  need(c.model_spec.has_value() || !c.model.empty(), "model", "name or inline spec required");
  need(!c.delta_grid.empty(), "delta_grid", "must not be empty");
  for (double d : c.delta_grid) need(d > 0 && std::isfinite(d), "delta_grid", "entries must be positive");
  need(c.n_paths > 0, "n_paths", "must be positive");
  need(c.steps_per_sub >= 8, "steps_per_sub", "must be >= 8");
  need(!c.eps_grid.empty(), "eps_grid", "must not be empty");
  for (double e : c.eps_grid) need(e > 0 && e < 1, "eps_grid", "entries must lie in (0,1)");
  need(c.rho > 0, "rho", "must be positive");
  need(c.r > 0, "r", "must be positive");
  need(c.p_exponent >= 2, "p_exponent", "must be >= 2");
  for (double v : c.x0) need(std::isfinite(v), "x0", "entries must be finite");
  need(!c.output_dir.empty(), "output_dir", "must not be empty");
}

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["model"] = c.model;
  if (c.model_spec) j["model_spec"] = *c.model_spec;
  j["x0"] = c.x0;
  j["delta_grid"] = c.delta_grid;
  j["n_paths"] = c.n_paths;
  j["steps_per_sub"] = c.steps_per_sub;
  j["seed"] = c.seed;
  j["eps_grid"] = c.eps_grid;
  j["rho"] = c.rho;
  j["r"] = c.r;
  j["p_exponent"] = c.p_exponent;
  j["centering"] = to_string(c.centering);
  j["output_dir"] = c.output_dir;
  j["convention_v"] = to_string(c.v_convention);
  j["convention_qp"] = to_string(c.qp_convention);
  return j;
}

inline ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  static const char* known[] = {"model", "model_spec", "x0", "delta_grid", "n_paths", "steps_per_sub", "seed",
                                "eps_grid", "rho", "r", "p_exponent", "centering", "output_dir",
                                "convention_v", "convention_qp"};
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(key + ": unknown field");
  }
  ExperimentConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string(key) + ": " + e.what());
    }
  };
  get("model", c.model);
  if (j.contains("model_spec")) {
    c.model_spec = j["model_spec"];
    polynomial_from_json(*c.model_spec);
  }
  get("x0", c.x0);
  get("delta_grid", c.delta_grid);
  get("n_paths", c.n_paths);
  get("steps_per_sub", c.steps_per_sub);
  get("seed", c.seed);
  get("eps_grid", c.eps_grid);
  get("rho", c.rho);
  get("r", c.r);
  get("p_exponent", c.p_exponent);
  get("output_dir", c.output_dir);
  std::string s;
  if (j.contains("centering")) {
    get("centering", s);
    c.centering = parse_centering(s);
  }
  if (j.contains("convention_v")) {
    get("convention_v", s);
    c.v_convention = parse_v_convention(s);
  }
  if (j.contains("convention_qp")) {
    get("convention_qp", s);
    c.qp_convention = parse_qp_convention(s);
  }
  validate(c);
  return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

inline std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2); }

/// FNV-1a over the canonical serialization without output_dir, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

class UnknownModelError : public ConfigError {
public:
  using ConfigError::ConfigError;
};

inline ModelPtr resolve_model(const ExperimentConfig& c) {
  if (c.model_spec) return polynomial_from_json(*c.model_spec);
  if (ModelPtr m = builtin::by_name(c.model)) return m;
  std::string list;
  for (const auto& n : builtin::names()) list += (list.empty() ? "" : ", ") + n;
  throw UnknownModelError("model: unknown name '" + c.model + "' (known: " + list + ")");
}

inline Vector start_point(const ExperimentConfig& c, const VectorFieldModel& m) {
  if (c.x0.empty()) return Vector::Zero(m.n());
  if (static_cast<int>(c.x0.size()) != m.n())
    throw ConfigError("x0: expected " + std::to_string(m.n()) + " entries, got " + std::to_string(c.x0.size()));
  return Eigen::Map<const Vector>(c.x0.data(), static_cast<Eigen::Index>(c.x0.size()));
}

}  // namespace hypodens
