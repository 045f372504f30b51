// SPDX-License-Identifier: Apache-2.0
//
// volo: inspection, verification, benchmarking and toy training.
// Exit status: 0 success, 1 verification failure, 2 usage error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "volo/volo.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t thread_count() {
  const char* env = std::getenv("VOLO_NUM_THREADS");
  if (!env || !*env) return 1;
  try {
    const long n = std::stol(env);
    if (n < 1) throw UsageError("VOLO_NUM_THREADS must be a positive integer");
    return std::size_t(n);
  } catch (const std::logic_error&) {
    throw UsageError(std::string("VOLO_NUM_THREADS must be a positive integer, got '") + env +
                     "'");
  }
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

std::vector<volo::AttentionKind> parse_kinds(const std::string& list) {
  std::vector<volo::AttentionKind> kinds;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) kinds.push_back(volo::parse_attention_kind(item));
  if (kinds.empty()) throw UsageError("no layer kinds given");
  return kinds;
}

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool json = false;
  std::string csv;
};

int cmd_inspect(const Common& o, const std::string& positional, std::size_t resolution) {
  const std::string name = !positional.empty() ? positional : (o.config.empty() ? "d1" : o.config);
  const auto config = volo::load_config(name);
  const auto report = volo::inspect(config, resolution ? resolution : config.image_size);
  if (o.json)
    std::cout << report.json().dump(2) << '\n';
  else
    std::cout << report.table();
  if (!o.csv.empty()) {
    std::ostringstream os;
    os << "part,count,params,madds\n";
    for (const auto& i : report.breakdown.items)
      os << i.part << ',' << i.count << ',' << i.params << ',' << i.madds << '\n';
    write_file(o.csv, os.str());
  }
  return kOk;
}

int cmd_gradcheck(const Common& o, const volo::gradcheck::Options& opt) {
  auto g = opt;
  g.base_seed = o.seed;
  const auto report = volo::gradcheck::run(g);
  if (o.json)
    std::cout << report.json().dump(2) << '\n';
  else
    std::cout << report.table();
  return report.passed() ? kOk : kFailed;
}

int cmd_oracle(const Common& o, const volo::OracleOptions& opt) {
  auto g = opt;
  g.base_seed = o.seed;
  if (g.max_extent < 1 || g.max_extent > 12 || g.max_channels < 1 || g.max_channels > 16)
    throw UsageError("oracle sizes are capped at 12 x 12 tokens and 16 channels");
  const auto report = volo::run_oracle_suite(g);
  if (o.json)
    std::cout << report.json().dump(2) << '\n';
  else
    std::cout << report.table();
  return report.passed() ? kOk : kFailed;
}

int cmd_bench(const Common& o, const std::string& kinds, const std::vector<std::size_t>& sizes,
              std::size_t channels, std::size_t kernel, std::size_t heads, std::size_t reps) {
  std::vector<volo::CostQuery> shapes;
  for (auto s : sizes) shapes.push_back({s, s, channels, kernel, heads});
  const auto rows = volo::run_bench(parse_kinds(kinds), shapes, reps, thread_count(), o.seed);
  if (!o.csv.empty()) write_file(o.csv, volo::bench_csv(rows));
  if (o.json) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"kind", std::string(volo::to_string(r.kind))},
                   {"height", r.shape.height},
                   {"width", r.shape.width},
                   {"channels", r.shape.channels},
                   {"kernel", r.shape.kernel},
                   {"heads", r.shape.heads},
                   {"median_ms", r.median_ms},
                   {"analytic_madds", r.analytic_madds},
                   {"measured_madds", r.measured_madds}});
    std::cout << j.dump(2) << '\n';
    return kOk;
  }
  std::printf("kind   tokens      C  K  N   median ms   analytic M-Adds   measured M-Adds\n");
  for (const auto& r : rows)
    std::printf("%-5s %3llux%-4llu %4llu %2llu %2llu %11.3f %17llu %17llu\n",
                std::string(volo::to_string(r.kind)).c_str(),
                (unsigned long long)r.shape.height, (unsigned long long)r.shape.width,
                (unsigned long long)r.shape.channels, (unsigned long long)r.shape.kernel,
                (unsigned long long)r.shape.heads, r.median_ms,
                (unsigned long long)r.analytic_madds, (unsigned long long)r.measured_madds);
  return kOk;
}

int cmd_train(const Common& o, volo::TrainOptions opt, volo::SyntheticSpec data,
              std::size_t log_every) {
  auto config = volo::load_config(o.config.empty() ? "tiny" : o.config);
  opt.seed = o.seed;
  data.seed = o.seed;
  data.image_size = config.image_size;
  const auto ds = volo::make_synthetic(data);
  std::ostringstream csv;
  csv << "step,loss,train_accuracy,lr,wall_ms\n";
  if (!o.json) std::printf("step      loss   batch acc        lr   ms\n");
  volo::TrainResult result;
  try {
    result = volo::train_toy(config, ds, opt, [&](const volo::TrainRecord& r) {
      csv << r.step << ',' << r.loss << ',' << r.train_accuracy << ',' << r.lr << ','
          << r.wall_ms << '\n';
      if (!o.json && (r.step % log_every == 0 || r.step + 1 == opt.steps))
        std::printf("%4zu  %8.5f   %9.3f  %.2e  %5.0f\n", r.step, r.loss, r.train_accuracy, r.lr,
                    r.wall_ms);
    });
  } catch (const volo::TrainingDiverged& e) {
    if (!o.csv.empty()) write_file(o.csv, csv.str());
    std::cerr << "training diverged: " << e.what() << '\n';
    return kFailed;
  }
  if (!o.csv.empty()) write_file(o.csv, csv.str());
  if (o.json) {
    nlohmann::json j;
    j["config"] = config;
    j["final_accuracy"] = result.final_accuracy;
    j["total_ms"] = result.total_ms;
    auto& recs = j["records"] = nlohmann::json::array();
    for (const auto& r : result.records)
      recs.push_back({{"step", r.step}, {"loss", r.loss}, {"train_accuracy", r.train_accuracy},
                      {"lr", r.lr}, {"wall_ms", r.wall_ms}});
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("final train accuracy %.4f over %zu samples, %.1f s\n", result.final_accuracy,
                ds.size(), result.total_ms / 1000.0);
  }
  return kOk;
}

int cmd_gen_data(const Common& o, volo::SyntheticSpec spec) {
  spec.seed = o.seed;
  const auto ds = volo::make_synthetic(spec);
  const double nearest = volo::nearest_template_accuracy(ds);
  if (!o.csv.empty()) {
    std::ostringstream os;
    os << "label";
    for (std::size_t p = 0; p < ds.pixels(); ++p) os << ",p" << p;
    os << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
      os << ds.labels[i];
      const float* px = ds.images.ptr() + i * ds.pixels();
      for (std::size_t p = 0; p < ds.pixels(); ++p) os << ',' << px[p];
      os << '\n';
    }
    write_file(o.csv, os.str());
  }
  if (o.json) {
    std::cout << nlohmann::json{{"classes", spec.classes},
                                {"per_class", spec.per_class},
                                {"image_size", spec.image_size},
                                {"noise", spec.noise},
                                {"seed", spec.seed},
                                {"samples", ds.size()},
                                {"nearest_template_accuracy", nearest}}
                     .dump(2)
              << '\n';
  } else {
    std::printf("%zu samples, %zu classes, %zux%zux3, noise %.3f, seed %llu\n", ds.size(),
                spec.classes, spec.image_size, spec.image_size, spec.noise,
                (unsigned long long)spec.seed);
    std::printf("nearest-template accuracy %.4f\n", nearest);
  }
  return kOk;
}

void add_common(CLI::App* sub, Common& o, bool with_config = true) {
  if (with_config) sub->add_option("--config", o.config, "preset (d1..d5, tiny) or JSON file");
  sub->add_option("--seed", o.seed, "random seed");
  sub->add_flag("--json", o.json, "machine-readable output on stdout");
  sub->add_option("--csv", o.csv, "also write CSV to this path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Outlook attention and VOLO model toolkit"};
  app.require_subcommand(1);
  Common o;

  std::string positional;
  std::size_t resolution = 0;
  auto* inspect = app.add_subcommand("inspect", "layer list, parameters and M-Adds of a model");
  add_common(inspect, o);
  inspect->add_option("model", positional, "preset or JSON file (same as --config)");
  inspect->add_option("--resolution", resolution, "input resolution (default: image_size)");

  volo::gradcheck::Options gopt;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gradcheck, o, false);
  gradcheck->add_option("--seeds", gopt.seeds, "seeds per case")->check(CLI::PositiveNumber);
  gradcheck->add_option("--tolerance", gopt.tolerance, "relative error bound");
  gradcheck->add_option("--step", gopt.step, "finite-difference step");
  gradcheck->add_flag("--inject-fault", gopt.inject_fault,
                      "add a case with a deliberately wrong backward");

  volo::OracleOptions oopt;
  auto* oracle = app.add_subcommand("oracle-check", "optimized layers against loop references");
  add_common(oracle, o, false);
  oracle->add_option("--seeds", oopt.seeds, "random instances per layer kind")
      ->check(CLI::PositiveNumber);
  oracle->add_option("--max-size", oopt.max_extent, "largest H and W (<= 12)");
  oracle->add_option("--max-channels", oopt.max_channels, "largest C (<= 16)");
  oracle->add_option("--tolerance", oopt.tolerance, "relative error bound");

  std::string kinds = "oa,lsa,sa,conv";
  std::vector<std::size_t> sizes{14, 28};
  std::size_t channels = 384, kernel = 3, heads = 6, reps = 3;
  auto* bench = app.add_subcommand("bench", "forward timing per layer kind and shape");
  add_common(bench, o, false);
  bench->add_option("--kinds", kinds, "comma-separated: oa, lsa, sa, conv");
  bench->add_option("--resolution", sizes, "token grid sizes H = W")->delimiter(',');
  bench->add_option("--channels", channels)->check(CLI::PositiveNumber);
  bench->add_option("--kernel", kernel)->check(CLI::PositiveNumber);
  bench->add_option("--heads", heads)->check(CLI::PositiveNumber);
  bench->add_option("--reps", reps, "repetitions per measurement")->check(CLI::PositiveNumber);

  volo::TrainOptions topt;
  volo::SyntheticSpec tdata;
  std::size_t log_every = 50;
  auto* train = app.add_subcommand("train-toy", "train a small model on synthetic data");
  add_common(train, o);
  train->add_option("--steps", topt.steps);
  train->add_option("--lr", topt.lr);
  train->add_option("--batch", topt.batch)->check(CLI::PositiveNumber);
  train->add_option("--weight-decay", topt.weight_decay);
  train->add_option("--classes", tdata.classes)->check(CLI::PositiveNumber);
  train->add_option("--per-class", tdata.per_class)->check(CLI::PositiveNumber);
  train->add_option("--noise", tdata.noise);
  train->add_option("--log-every", log_every)->check(CLI::PositiveNumber);

  volo::SyntheticSpec gdata;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, o, false);
  gen->add_option("--classes", gdata.classes)->check(CLI::PositiveNumber);
  gen->add_option("--per-class", gdata.per_class)->check(CLI::PositiveNumber);
  gen->add_option("--resolution", gdata.image_size)->check(CLI::PositiveNumber);
  gen->add_option("--noise", gdata.noise);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*inspect) return cmd_inspect(o, positional, resolution);
    if (*gradcheck) return cmd_gradcheck(o, gopt);
    if (*oracle) return cmd_oracle(o, oopt);
    if (*bench) return cmd_bench(o, kinds, sizes, channels, kernel, heads, reps);
    if (*train) return cmd_train(o, topt, tdata, log_every);
    if (*gen) return cmd_gen_data(o, gdata);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    // configuration, geometry and shape errors all derive from this
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kUsage;
}
