// hypodens: batch runner for the small-time density experiments.

#include "hypodens/acceptance.hpp"
#include "hypodens/config.hpp"
#include "hypodens/decomp.hpp"
#include "hypodens/density.hpp"
#include "hypodens/report.hpp"
#include "hypodens/sde.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

using namespace hypodens;

namespace {

enum Exit : int {
  kOk = 0,
  kCriteriaFailed = 1,
  kUsage = 2,
  kUnknownModel = 3,
  kConfig = 4,
  kOutput = 5,
  kNumerical = 6,
};

struct UsageError : Error {
  using Error::Error;
};

std::vector<double> parse_list(const std::string& s, const std::string& field) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(field + ": cannot parse '" + tok + "' as a number");
    }
  }
  if (out.empty()) throw ConfigError(field + ": empty list");
  return out;
}

struct Flags {
  std::string config_file;
  std::string model, x0, delta_grid, eps_grid, centering, out, conv_v, conv_qp;
  std::size_t paths = 0;
  int steps = 0;
  std::uint64_t seed = 0;
  double rho = 0, r = 0, p = 0;
  // norm
  double delta = 0.01;
  std::string y;
  // verify
  double scale = 1.0;
  std::vector<int> criteria;

  // every subcommand registers its own copy of the shared flags
  std::map<std::string, std::vector<CLI::Option*>> opts;
  bool given(const std::string& k) const {
    auto it = opts.find(k);
    if (it == opts.end()) return false;
    for (const auto* o : it->second)
      if (o->count() > 0) return true;
    return false;
  }
};

void add_common(CLI::App* sub, Flags& f) {
  f.opts["config"].push_back(sub->add_option("--config", f.config_file, "JSON experiment config"));
  f.opts["model"].push_back(sub->add_option("--model", f.model, "built-in model name"));
  f.opts["x0"].push_back(sub->add_option("--x0", f.x0, "start point, comma separated"));
  f.opts["delta-grid"].push_back(sub->add_option("--delta-grid", f.delta_grid, "comma separated horizons"));
  f.opts["paths"].push_back(sub->add_option("--paths", f.paths, "Monte Carlo paths per horizon"));
  f.opts["steps"].push_back(sub->add_option("--steps", f.steps, "Euler steps per sub-interval"));
  f.opts["seed"].push_back(sub->add_option("--seed", f.seed, "master seed"));
  f.opts["eps-grid"].push_back(sub->add_option("--eps-grid", f.eps_grid, "comma separated epsilons"));
  f.opts["rho"].push_back(sub->add_option("--rho", f.rho, "support exponent rho"));
  f.opts["r"].push_back(sub->add_option("--r", f.r, "lower-bound radius"));
  f.opts["p"].push_back(sub->add_option("--p", f.p, "tail exponent"));
  f.opts["centering"].push_back(sub->add_option("--centering", f.centering, "x0 | x0+bdelta"));
  f.opts["out"].push_back(sub->add_option("--out", f.out, "output directory"));
  f.opts["convention-v"].push_back(sub->add_option("--convention-v", f.conv_v, "weighted | bare"));
  f.opts["convention-qp"].push_back(sub->add_option("--convention-qp", f.conv_qp, "p-block | i-block"));
}

ExperimentConfig build_config(const Flags& f, bool need_model) {
  ExperimentConfig c;
  bool has_model = false;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw ConfigError("config: cannot read '" + f.config_file + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const Json j = [&] {
      try {
        return Json::parse(ss.str());
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }();
    c = config_from_json(j);
    has_model = j.is_object() && (j.contains("model") || j.contains("model_spec"));
  }
  if (f.given("model")) {
    c.model = f.model;
    c.model_spec.reset();
    has_model = true;
  }
  if (need_model && !has_model) throw UsageError("a model is required (--model NAME or --config FILE)");
  if (f.given("x0")) c.x0 = parse_list(f.x0, "x0");
  if (f.given("delta-grid")) c.delta_grid = parse_list(f.delta_grid, "delta_grid");
  if (f.given("paths")) c.n_paths = f.paths;
  if (f.given("steps")) c.steps_per_sub = f.steps;
  if (f.given("seed")) c.seed = f.seed;
  if (f.given("eps-grid")) c.eps_grid = parse_list(f.eps_grid, "eps_grid");
  if (f.given("rho")) c.rho = f.rho;
  if (f.given("r")) c.r = f.r;
  if (f.given("p")) c.p_exponent = f.p;
  if (f.given("centering")) c.centering = parse_centering(f.centering);
  if (f.given("out")) c.output_dir = f.out;
  if (f.given("convention-v")) c.v_convention = parse_v_convention(f.conv_v);
  if (f.given("convention-qp")) c.qp_convention = parse_qp_convention(f.conv_qp);
  validate(c);
  return c;
}

Stamp stamp_of(const ExperimentConfig& c) { return Stamp{config_hash(c), c.seed}; }

void write_config(const ExperimentConfig& c, const std::filesystem::path& dir) {
  auto f = open_out(dir / "config.json");
  f << serialize(c) << '\n';
}

int run_norm(const Flags& f) {
  const ExperimentConfig c = build_config(f, true);
  const ModelPtr m = resolve_model(c);
  const Vector x0 = start_point(c, *m);
  if (!(f.delta > 0)) throw ConfigError("delta: must be positive");
  const DirectionalMatrix a = directional_matrix(*m, 0.0, x0);
  const DirectionalMatrix ad = scale_matrix(a, f.delta);
  std::cout << "model " << m->name() << "  n=" << m->n() << " d=" << m->d() << "  delta=" << fmt_num(f.delta) << '\n';
  std::cout << "A(0,x0) columns l(i,p):\n";
  for (int p = 0; p < m->d(); ++p)
    for (int i = 0; i < m->d(); ++i) {
      std::cout << "  l=" << a.col_index(i, p) + 1 << " (" << (i == p ? "sigma_" + std::to_string(i + 1)
                                                                        : "[sigma_" + std::to_string(i + 1) + ",sigma_" +
                                                                              std::to_string(p + 1) + "]")
                << ") " << format_vector(a.entries.col(a.col_index(i, p))) << '\n';
    }
  std::cout << "lambda(0,x0) " << fmt_num(hoermander_lambda(a)) << '\n';
  std::cout << "dim span sigma " << dim_span_sigma(*m, 0.0, x0) << "  diagonal exponent "
            << fmt_num(diagonal_exponent_theory(*m, x0)) << '\n';
  std::cout << "singular values of A_delta " << format_vector(ad.singular_values) << '\n';
  if (ad.full_row_rank()) std::cout << "det alpha " << fmt_num(alpha_factor(ad).det) << '\n';
  double value = std::nan("");
  if (!f.y.empty()) {
    const auto yv = parse_list(f.y, "y");
    if (static_cast<int>(yv.size()) != m->n())
      throw ConfigError("y: expected " + std::to_string(m->n()) + " entries");
    const Vector y = Eigen::Map<const Vector>(yv.data(), m->n());
    value = aniso_norm(ad, y);
    std::cout << "|y|_A_delta " << fmt_num(value) << '\n';
  }
  if (f.given("out")) {
    const auto dir = ensure_dir(c.output_dir);
    CsvTable t({"delta", "column", "i", "p", "entries", "lambda", "norm_y"});
    for (int p = 0; p < m->d(); ++p)
      for (int i = 0; i < m->d(); ++i) {
        std::string ent;
        const Vector col = ad.entries.col(a.col_index(i, p));
        for (int k = 0; k < col.size(); ++k) ent += (k ? " " : "") + fmt_num(col[k]);
        t.add({fmt_num(f.delta), std::to_string(a.col_index(i, p) + 1), std::to_string(i + 1), std::to_string(p + 1),
               ent, fmt_num(hoermander_lambda(a)), fmt_num(value)});
      }
    t.write(dir / "norm.csv", stamp_of(c));
  }
  return kOk;
}

int run_simulate(const Flags& f) {
  const ExperimentConfig c = build_config(f, true);
  const ModelPtr m = resolve_model(c);
  const Vector x0 = start_point(c, *m);
  const auto dir = ensure_dir(c.output_dir);
  write_config(c, dir);
  const Stamp st = stamp_of(c);
  for (std::size_t i = 0; i < c.delta_grid.size(); ++i) {
    const auto est = sample_scaled_endpoints(*m, x0, c.delta_grid[i], c.n_paths, stream_seed(c.seed, 100 + i),
                                             c.steps_per_sub, c.centering);
    std::vector<std::string> head;
    for (int k = 0; k < m->n(); ++k) head.push_back("F" + std::to_string(k + 1));
    for (int k = 0; k < m->n(); ++k) head.push_back("X" + std::to_string(k + 1));
    CsvTable t(head);
    for (std::size_t s = 0; s < est.size(); ++s) {
      const Vector fz = est.samples.col(static_cast<Eigen::Index>(s));
      const Vector x = est.center + est.alpha.apply(fz);
      std::vector<std::string> row;
      for (int k = 0; k < m->n(); ++k) row.push_back(fmt_num(fz[k]));
      for (int k = 0; k < m->n(); ++k) row.push_back(fmt_num(x[k]));
      t.add(std::move(row));
    }
    const std::string name = "endpoints_" + std::to_string(i) + ".csv";
    t.write(dir / name, st);
    std::cout << "delta " << fmt_num(c.delta_grid[i]) << ": " << est.size() << " samples, " << est.dropped
              << " dropped -> " << (dir / name).string() << '\n';
  }
  return kOk;
}

int run_decompose(const Flags& f) {
  const ExperimentConfig c = build_config(f, true);
  const ModelPtr m = resolve_model(c);
  const Vector x0 = start_point(c, *m);
  const auto dir = ensure_dir(c.output_dir);
  write_config(c, dir);
  const Stamp st = stamp_of(c);
  const DirectionalMatrix a = directional_matrix(*m, 0.0, x0);
  CsvTable res({"delta", "steps_per_sub", "n_paths", "rms_residual", "max_residual"});
  const std::size_t npath = std::min<std::size_t>(c.n_paths, 100000);
  for (double delta : c.delta_grid) {
    for (int steps : {c.steps_per_sub, 4 * c.steps_per_sub}) {
      std::vector<double> r(npath);
      parallel_for(npath, [&](std::size_t k) {
        const auto p = sample_path(stream_seed(c.seed ^ 0xdec0ULL, k), m->d(), delta, steps);
        r[k] = verify_key_decomposition(taylor_principal(*m, x0, p, c.v_convention), a);
      });
      res.add({fmt_num(delta), std::to_string(steps), std::to_string(npath), fmt_num(rms(r)),
               fmt_num(*std::max_element(r.begin(), r.end()))});
      std::cout << "delta " << fmt_num(delta) << " steps " << steps << ": key residual rms " << fmt_num(rms(r)) << '\n';
    }
  }
  res.write(dir / "decomposition_residual.csv", st);
  const auto rs = remainder_scaling(*m, x0, c.seed, npath, c.delta_grid, c.steps_per_sub);
  CsvTable rt({"delta", "n_paths", "rms_remainder"});
  std::vector<double> lx, ly;
  for (const auto& row : rs.rows) {
    rt.add({fmt_num(row.delta), std::to_string(row.n_paths), fmt_num(row.rms)});
    if (row.rms > 0) {
      lx.push_back(std::log(row.delta));
      ly.push_back(std::log(row.rms));
    }
  }
  rt.write(dir / "remainder_scaling.csv", st);
  write_plot_data(dir / "remainder_scaling.dat", st, lx, ly);
  std::cout << "remainder slope " << fmt_num(rs.fit.slope) << " (95% CI " << fmt_num(rs.fit.ci_lo) << ".."
            << fmt_num(rs.fit.ci_hi) << ")\n";
  return kOk;
}

int run_support(const Flags& f) {
  const ExperimentConfig c = build_config(f, false);
  SupportConfig s;
  s.d = f.given("model") || !f.config_file.empty() ? resolve_model(c)->d() : 2;
  s.eps_grid = c.eps_grid;
  s.rho = c.rho;
  s.n_samples = c.n_paths;
  s.seed = c.seed;
  s.steps_per_sub = c.steps_per_sub;
  s.qp_convention = c.qp_convention;
  const auto dir = ensure_dir(c.output_dir);
  write_config(c, dir);
  const auto stats = support_statistics(s);
  CsvTable t({"epsilon", "event", "n", "hits", "p_hat", "ci_lo", "ci_hi"});
  for (const auto& row : stats.rows) {
    for (const auto& [name, pr] : {std::pair{"upsilon", row.upsilon}, std::pair{"lambda", row.lambda}})
      t.add({fmt_num(row.epsilon), name, std::to_string(pr.n), std::to_string(pr.hits), fmt_num(pr.p_hat),
             fmt_num(pr.ci_lo), fmt_num(pr.ci_hi)});
    std::cout << "eps " << fmt_num(row.epsilon) << ": P(upsilon) " << fmt_num(row.upsilon.p_hat) << "  P(Lambda) "
              << fmt_num(row.lambda.p_hat) << '\n';
  }
  t.write(dir / "support.csv", stamp_of(c));
  std::cout << "upsilon slope " << fmt_num(stats.upsilon_slope) << ", Lambda slope " << fmt_num(stats.lambda_slope)
            << " (" << stats.lambda_censored.size() << " censored)\n";
  return kOk;
}

int run_covariance(const Flags& f) {
  const ExperimentConfig c = build_config(f, true);
  const ModelPtr m = resolve_model(c);
  const Vector x0 = start_point(c, *m);
  const auto dir = ensure_dir(c.output_dir);
  write_config(c, dir);
  const auto rows = covariance_statistics(*m, x0, c.delta_grid, c.n_paths, c.seed, c.steps_per_sub);
  CsvTable t({"delta", "n_paths", "q05", "q25", "median", "q75", "truncated_inverse_moment"});
  for (const auto& r : rows) {
    t.add({fmt_num(r.delta), std::to_string(r.n_paths), fmt_num(r.q05), fmt_num(r.q25), fmt_num(r.median),
           fmt_num(r.q75), fmt_num(r.truncated_inverse_moment)});
    std::cout << "delta " << fmt_num(r.delta) << ": lambda_* median " << fmt_num(r.median) << ", q05 "
              << fmt_num(r.q05) << '\n';
  }
  t.write(dir / "covariance.csv", stamp_of(c));
  return kOk;
}

int run_density(const Flags& f) {
  const ExperimentConfig c = build_config(f, true);
  const ModelPtr m = resolve_model(c);
  const Vector x0 = start_point(c, *m);
  const auto dir = ensure_dir(c.output_dir);
  write_config(c, dir);
  const Stamp st = stamp_of(c);
  std::vector<DensityEstimate> ests;
  for (std::size_t i = 0; i < c.delta_grid.size(); ++i)
    ests.push_back(sample_scaled_endpoints(*m, x0, c.delta_grid[i], c.n_paths, stream_seed(c.seed, 100 + i),
                                           c.steps_per_sub, c.centering));
  std::vector<const DensityEstimate*> ptrs;
  for (const auto& e : ests) ptrs.push_back(&e);
  const double expo = diagonal_exponent_theory(*m, x0);

  if (ests.size() >= 2) {
    const auto de = diagonal_exponent_from(*m, x0, ptrs);
    CsvTable t({"delta", "det_alpha", "p_hat", "censored"});
    std::vector<double> lx, ly;
    for (const auto& row : de.rows) {
      t.add({fmt_num(row.delta), fmt_num(row.det_alpha), fmt_num(row.p_hat), row.censored ? "1" : "0"});
      if (!row.censored) {
        lx.push_back(std::log(row.delta));
        ly.push_back(std::log(row.p_hat));
      }
    }
    t.write(dir / "diagonal.csv", st);
    write_plot_data(dir / "diagonal.dat", st, lx, ly);
    std::cout << "diagonal slope " << fmt_num(de.fit.slope) << " (95% CI " << fmt_num(de.fit.ci_lo) << ".."
              << fmt_num(de.fit.ci_hi) << "), theory " << fmt_num(de.expected) << '\n';
  }

  CsvTable lb({"delta", "y_mesh_id", "norm_A_delta", "p_hat", "normalized_stat"});
  CsvTable tl({"delta", "y_mesh_id", "norm_A_delta", "p_hat", "normalized_stat"});
  const Vector b0 = m->drift_at(0.0, x0);
  for (const auto& e : ests) {
    const auto l = lower_bound_stat(e, c.r, expo);
    for (const auto& row : l.mesh)
      lb.add({fmt_num(row.delta), std::to_string(row.mesh_id), fmt_num(row.norm_a_delta), fmt_num(row.p_hat),
              fmt_num(row.normalized_stat)});
    const auto t = tail_stat(e, x0, b0, c.p_exponent, expo);
    for (const auto& row : t.mesh)
      tl.add({fmt_num(row.delta), std::to_string(row.mesh_id), fmt_num(row.norm_a_delta), fmt_num(row.p_hat),
              fmt_num(row.normalized_stat)});
    std::cout << "delta " << fmt_num(e.delta) << ": lower min " << fmt_num(l.min_normalized) << ", tail sup "
              << fmt_num(t.sup_stat) << ", recentering ratio " << fmt_num(t.recenter_ratio) << '\n';
  }
  lb.write(dir / "lower_bound_mesh.csv", st);
  tl.write(dir / "tail_mesh.csv", st);
  return kOk;
}

int run_verify(const Flags& f) {
  const ExperimentConfig c = build_config(f, false);
  acceptance::Options o;
  o.model = f.given("model") || !f.config_file.empty() ? c.model : "heisenberg";
  if (!builtin::by_name(o.model)) resolve_model(c);  // raises UnknownModelError
  o.scale = f.scale;
  if (f.given("seed")) o.seed = c.seed;
  o.steps_per_sub = c.steps_per_sub;
  o.out_dir = c.output_dir;
  if (!(o.scale > 0)) throw ConfigError("scale: must be positive");
  acceptance::Runner runner(o);
  std::vector<CriterionResult> results;
  if (f.criteria.empty()) {
    results = runner.run_all(&std::cout);
  } else {
    for (int id : f.criteria) {
      if (id < 1 || id > 12) throw ConfigError("criteria: ids must lie in 1..12");
      results.push_back(runner.run(id));
      std::cout << status_line(results.back()) << std::endl;
    }
  }
  Json cfg = to_json(c);
  cfg["model"] = o.model;
  cfg["seed"] = o.seed;
  cfg["scale"] = o.scale;
  emit_report(results, o.out_dir, runner.stamp(), cfg);
  bool all = true;
  for (const auto& r : results) all = all && r.passed;
  std::cout << (all ? "all criteria passed" : "some criteria failed") << "; report in " << o.out_dir << "/report.json\n";
  return all ? kOk : kCriteriaFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hypodens: small-time density experiments for hypoelliptic diffusions"};
  app.require_subcommand(1);
  Flags f;
  std::function<int()> action;

  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const Flags&);
  };
  const Sub subs[] = {
      {"norm", "directional matrix, Hoermander constant and |y|_A_delta", run_norm},
      {"simulate", "scaled endpoint samples per horizon", run_simulate},
      {"decompose", "key-decomposition residual and remainder scaling", run_decompose},
      {"support", "support statistics of the unit-horizon Brownian functionals", run_support},
      {"covariance", "quantiles of the smallest eigenvalue of the reduced Malliavin covariance", run_covariance},
      {"density", "diagonal exponent, lower-bound and tail suites", run_density},
      {"verify", "run the acceptance criteria and write report.json", run_verify},
  };
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, f);
    if (std::string(s.name) == "norm") {
      sub->add_option("--delta", f.delta, "horizon");
      sub->add_option("--y", f.y, "vector, comma separated");
    }
    if (std::string(s.name) == "verify") {
      sub->add_option("--scale", f.scale, "multiplier on every Monte Carlo sample count");
      sub->add_option("--criteria", f.criteria, "subset of criterion ids")->delimiter(',');
    }
    auto fn = s.fn;
    sub->callback([&action, &f, fn] { action = [&f, fn] { return fn(f); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  try {
    return action();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const UnknownModelError& e) {
    std::cerr << "unknown model: " << e.what() << '\n';
    return kUnknownModel;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const OutputError& e) {
    std::cerr << "output error: " << e.what() << '\n';
    return kOutput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
}
