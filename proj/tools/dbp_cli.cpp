// dbp: sine-toy experiments, operation-count report and gradient checks.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dbp/dbp.hpp"

namespace {

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in);
}

// Writes to `path`, or stdout when path is empty or "-".
template <class Fn>
void write_output(const std::string& path, Fn&& fn) {
  if (path.empty() || path == "-") {
    fn(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  fn(out);
}

int run_train(const std::string& config_path, const std::string& out_path) {
  dbp::TrainConfig cfg;
  if (!config_path.empty()) cfg = read_json(config_path).get<dbp::TrainConfig>();
  const dbp::TrainResult r = dbp::train_sine(cfg);
  write_output(out_path, [&](std::ostream& os) { os << r.checkpoint.dump(2) << '\n'; });
  std::fprintf(stderr, "train-sine: init seed %llu after %zu attempt(s), mse %.6g (target %.3g)\n",
               static_cast<unsigned long long>(r.init_seed), r.attempts, r.mse,
               cfg.mse_target);
  if (!r.reached_target) {
    std::fprintf(stderr,
                 "train-sine: mse target not reached in %zu attempts of %zu epochs; "
                 "try another \"seed\" in the config\n",
                 r.attempts, cfg.epochs);
    return 1;
  }
  return 0;
}

int run_sweep_input(const std::string& ckpt, double from, double to, std::size_t points,
                    const std::string& out_path) {
  const dbp::Network net = dbp::network_from_checkpoint(read_json(ckpt));
  const auto rows = dbp::landscape_input_sweep(net, from, to, points);
  write_output(out_path, [&](std::ostream& os) { dbp::input_sweep_csv(rows).write(os); });
  return 0;
}

struct SweepParamArgs {
  std::string ckpt;
  std::string param = "layer2.w[0][0]";
  std::string penalty = "node";
  std::size_t batch = 0;
  std::uint64_t seed = 0;
  std::optional<double> from, to;
  double radius = 2.0;
  std::size_t points = 2001;
  double anchor = 1.022;
  std::string out;
};

int run_sweep_param(const SweepParamArgs& a) {
  const nlohmann::json ckpt = read_json(a.ckpt);
  const dbp::Network net = dbp::network_from_checkpoint(ckpt);
  const dbp::TrainConfig tc = dbp::checkpoint_training(ckpt);
  const dbp::Dataset data = dbp::make_sine_dataset(tc.samples, tc.seed, tc.target);
  dbp::ParamSweepConfig cfg;
  cfg.param = dbp::parse_param_id(a.param);
  cfg.penalty = dbp::parse_sweep_penalty(a.penalty);
  cfg.batch = a.batch;
  cfg.seed = a.seed;
  cfg.points = a.points;
  cfg.anchor = a.anchor;
  const double current = dbp::parameter_value(net, cfg.param);
  cfg.from = a.from.value_or(current - a.radius);
  cfg.to = a.to.value_or(current + a.radius);
  const auto rows = dbp::landscape_param_sweep(net, data, cfg);
  write_output(a.out, [&](std::ostream& os) { dbp::param_sweep_csv(rows).write(os); });
  return 0;
}

int run_opcount(const std::string& out_path) {
  const nlohmann::json report = dbp::opcount_report_json(dbp::opcount_rows());
  write_output(out_path, [&](std::ostream& os) { os << report.dump(2) << '\n'; });
  if (!report.at("all_match").get<bool>()) {
    for (const auto& row : report.at("rows")) {
      if (!row.at("match").get<bool>()) std::cerr << "mismatch: " << row.dump() << '\n';
    }
    return 1;
  }
  return 0;
}

int run_gradcheck(std::uint64_t seed, double tolerance) {
  bool ok = true;
  for (const auto& c : dbp::gradcheck_battery(seed)) {
    const bool pass = c.penalty_error <= tolerance && c.total_error <= tolerance;
    ok = ok && pass;
    std::printf("%-4s %-36s penalty %.3e  total %.3e  skipped %zu\n",
                pass ? "ok" : "FAIL", c.name.c_str(), c.penalty_error, c.total_error,
                c.skipped);
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Double backpropagation experiments"};
  app.require_subcommand(1);

  std::string train_config, train_out;
  auto* train = app.add_subcommand("train-sine", "fit the sine toy network");
  train->add_option("--config", train_config, "training config JSON");
  train->add_option("--out", train_out, "checkpoint path (default stdout)");

  std::string si_ckpt, si_out;
  double si_from = -3.14159, si_to = 3.14159;
  std::size_t si_points = 2001;
  auto* sweep_input = app.add_subcommand("sweep-input", "sweep x_0 for a trained net");
  sweep_input->add_option("--ckpt", si_ckpt, "checkpoint JSON")->required();
  sweep_input->add_option("--from", si_from);
  sweep_input->add_option("--to", si_to);
  sweep_input->add_option("--points", si_points)->check(CLI::Range(2, 100000000));
  sweep_input->add_option("--out", si_out, "CSV path (default stdout)");

  SweepParamArgs sp;
  auto* sweep_param =
      app.add_subcommand("sweep-param", "sweep one second-layer parameter");
  sweep_param->add_option("--ckpt", sp.ckpt, "checkpoint JSON")->required();
  sweep_param->add_option("--param", sp.param, "layer2.w[r][c] or layer2.b[r]");
  sweep_param->add_option("--penalty", sp.penalty, "node or cdb");
  sweep_param->add_option("--batch", sp.batch, "0 for one sample, else batch size M");
  sweep_param->add_option("--seed", sp.seed, "batch sampling seed");
  sweep_param->add_option("--from", sp.from, "default: current value - radius");
  sweep_param->add_option("--to", sp.to, "default: current value + radius");
  sweep_param->add_option("--radius", sp.radius);
  sweep_param->add_option("--points", sp.points)->check(CLI::Range(2, 100000000));
  sweep_param->add_option("--anchor", sp.anchor, "x_0 of the single sample");
  sweep_param->add_option("--out", sp.out, "CSV path (default stdout)");

  std::string oc_out;
  auto* opcount = app.add_subcommand("opcount-report", "measured vs formula op counts");
  opcount->add_option("--out", oc_out, "JSON path (default stdout)");

  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite differences");
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_option("--tolerance", gc_tol);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(train_config, train_out);
    if (*sweep_input) return run_sweep_input(si_ckpt, si_from, si_to, si_points, si_out);
    if (*sweep_param) return run_sweep_param(sp);
    if (*opcount) return run_opcount(oc_out);
    if (*gradcheck) return run_gradcheck(gc_seed, gc_tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
