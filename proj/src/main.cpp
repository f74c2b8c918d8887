#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dualrr/checkpoint.hpp"
#include "dualrr/log.hpp"
#include "dualrr/metrics.hpp"
#include "dualrr/reward.hpp"
#include "dualrr/sampler.hpp"
#include "dualrr/serve.hpp"
#include "dualrr/stream.hpp"
#include "dualrr/theory.hpp"
#include "dualrr/train.hpp"
#include "json.hpp"

namespace {

using namespace dualrr;

struct Options {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::string mode;
  std::string ablate;
  std::string input;  // positional: log / request file
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::uint64_t steps = 0;
  bool steps_set = false;
  std::uint64_t trials = 0;
};

TrainConfig assemble_config(const Options& opt) {
  TrainConfig cfg;
  if (!opt.config.empty()) cfg = load_train_config(opt.config);
  if (opt.seed_set) cfg.seed = opt.seed;
  if (opt.steps_set) cfg.total_steps = opt.steps;
  if (opt.mode == "grpo")
    cfg.grpo_mode = true;
  else if (opt.mode == "ldro")
    cfg.grpo_mode = false;
  else if (!opt.mode.empty())
    throw UserError("--mode must be ldro or grpo");
  if (!opt.ablate.empty()) {
    std::stringstream ss(opt.ablate);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok == "no_kd")
        cfg.no_kd = true;
      else if (tok == "no_rank_weight")
        cfg.no_rank_weight = true;
      else if (tok == "no_batch_decouple")
        cfg.no_batch_decouple = true;
      else if (!tok.empty())
        throw UserError("--ablate: unknown switch \"" + tok +
                        "\" (known: no_kd, no_rank_weight, no_batch_decouple)");
    }
  }
  return cfg;
}

// Reconstructs a trainer (model + reward net + config) from a checkpoint,
// reading the run configuration stored inside it.
Trainer trainer_from_checkpoint(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (!ck.has_meta("config"))
    throw UserError("checkpoint: missing embedded config: " + path);
  TrainConfig cfg = parse_train_config(ck.meta_at("config"));
  return Trainer(cfg, path);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out.good()) throw Error("cannot write " + path);
}

int cmd_train(const Options& opt) {
  TrainConfig cfg = assemble_config(opt);
  const std::string out_dir = opt.out.empty() ? "out" : opt.out;
  log_info("training: " + std::to_string(cfg.total_steps) + " steps -> " +
           out_dir);
  const std::string final_path = run_training(cfg, out_dir, opt.checkpoint);
  log_info("training finished: " + final_path);
  return 0;
}

int cmd_simulate(const Options& opt) {
  TrainConfig cfg = assemble_config(opt);
  if (!opt.steps_set)
    throw UserError("simulate: --steps (record count) is required");
  StreamSim sim(cfg.env);
  const auto records = sim.next_batch(
      StreamSim::uniform_policy(cfg.env.seed + 1, cfg.env.l_out), opt.steps);
  const std::string out_dir = opt.out.empty() ? "out" : opt.out;
  std::filesystem::create_directories(out_dir);
  const std::string path = out_dir + "/records.jsonl";
  write_jsonl(path, records);
  log_info("simulated " + std::to_string(records.size()) + " records -> " +
           path);
  return 0;
}

int cmd_eval(const Options& opt) {
  if (opt.checkpoint.empty()) throw UserError("eval: --checkpoint is required");
  if (opt.input.empty())
    throw UserError("eval: an interaction log (JSONL path) is required");
  Trainer trainer = trainer_from_checkpoint(opt.checkpoint);
  const std::vector<InteractionRecord> records = ingest_log(opt.input);
  if (records.empty()) throw UserError("eval: the log has no records");
  const RankerModel& model = trainer.model();

  MetricReport report;
  report.window_start = records.front().step;
  report.window_end = records.back().step;
  report.samples = records.size();
  report.add("ptar", ptar(model, records));

  double rfr_sum = 0.0;
  std::size_t rfr_n = 0;
  double ndcg_sum = 0.0, consist_sum = 0.0;
  for (const InteractionRecord& rec : records) {
    EncoderOutput enc = model.encode(rec.ctx, rec.cands);
    Tensor cube = model.student_forward(enc);
    Tensor first = model.teacher_step(enc, {});
    try {
      rfr_sum += rfr(first.values(), slice_rows(cube, 0, 1).values());
      ++rfr_n;
    } catch (const Error&) {
      // Every teacher pair tied: no ordered pairs to flip on this record.
    }
    const Slate student_slate = greedy_slate(cube);
    const std::size_t depth = std::min<std::size_t>(4, student_slate.size());
    ndcg_sum += prior_ndcg(student_slate, rec.true_relevance, depth);
    consist_sum += sequence_consistency(student_slate, rec.exposed);
  }
  const double n = static_cast<double>(records.size());
  report.add("rfr", rfr_n > 0 ? rfr_sum / static_cast<double>(rfr_n) : 0.5);
  report.add("ndcg_vs_oracle", ndcg_sum / n);
  report.add("sequence_consistency", consist_sum / n);

  const std::string line = report.to_json();
  std::cout << line << "\n";
  if (!opt.out.empty()) {
    std::filesystem::create_directories(opt.out);
    write_text(opt.out + "/eval.json", line + "\n");
  }
  return 0;
}

int cmd_infer(const Options& opt) {
  if (opt.checkpoint.empty())
    throw UserError("infer: --checkpoint is required");
  if (opt.input.empty())
    throw UserError("infer: a request file (JSONL path) is required");
  Trainer trainer = trainer_from_checkpoint(opt.checkpoint);
  std::ifstream in(opt.input);
  if (!in) throw UserError("infer: cannot open " + opt.input);

  std::ostringstream results;
  std::string line;
  std::size_t line_no = 0;
  std::size_t served = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ServeRequest req;
    try {
      req = parse_serve_request(line);
    } catch (const UserError& e) {
      throw UserError("infer: line " + std::to_string(line_no) + ": " +
                      e.what());
    }
    ServeResult res = serve(req, trainer.model(), trainer.reward_net(),
                            trainer.config().alpha);
    results << serve_result_to_json(res) << "\n";
    ++served;
    log_debug("served line " + std::to_string(line_no));
  }
  if (served == 0) throw UserError("infer: no requests in " + opt.input);
  if (opt.out.empty()) {
    std::cout << results.str();
  } else {
    std::filesystem::create_directories(opt.out);
    write_text(opt.out + "/results.jsonl", results.str());
    log_info("served " + std::to_string(served) + " requests -> " + opt.out +
             "/results.jsonl");
  }
  return 0;
}

int cmd_bench(const Options& opt) {
  TrainConfig cfg = assemble_config(opt);
  const std::size_t trials = opt.trials == 0 ? 1000 : opt.trials;
  BenchReport rep;
  if (!opt.checkpoint.empty()) {
    Trainer trainer = trainer_from_checkpoint(opt.checkpoint);
    rep = bench_decoding(trainer.model(), trainer.model(),
                         trainer.reward_net(), trials,
                         trainer.config().env.n_cand, cfg.seed);
  } else {
    const RankerModel model(cfg.model, cfg.seed);
    const RewardNet rnet(cfg.model, cfg.reward_hidden, cfg.seed + 1);
    rep = bench_decoding(model, model, rnet, trials, cfg.env.n_cand, cfg.seed);
  }
  std::cout << rep.to_text() << rep.to_json() << "\n";
  if (!opt.out.empty()) {
    std::filesystem::create_directories(opt.out);
    write_text(opt.out + "/bench.txt", rep.to_text());
    write_text(opt.out + "/bench.json", rep.to_json() + "\n");
  }
  return 0;
}

int cmd_verify_theory(const Options& opt) {
  const std::uint64_t trials = opt.trials == 0 ? 2000 : opt.trials;
  const std::uint64_t seed = opt.seed_set ? opt.seed : 1234;
  log_info("sampled ranking-stability check: " + std::to_string(trials) +
           " trials");
  FlipBoundReport flip = verify_flip_bound(
      trials, 4, {0.005, 0.02, 0.08}, {0.1, 0.3, 0.5}, seed);
  log_info("exhaustive grid check over the 3-outcome simplex");
  GridReport grid = flip_bound_grid(3, 0.05);

  std::printf("ranking stability: margin >= sqrt(2*divergence) forbids flips\n");
  std::printf("%10s %8s %14s %8s %12s\n", "eps", "delta", "margin_pairs",
              "flips", "mean_bound");
  for (const FlipCell& c : flip.cells)
    std::printf("%10.4f %8.2f %14llu %8llu %12.6f\n", c.eps_target, c.delta,
                static_cast<unsigned long long>(c.margin_pairs),
                static_cast<unsigned long long>(c.flips), c.mean_bound);
  std::printf(
      "sampled: %llu pairs, %llu sufficient cases, %llu violations, "
      "pinsker excess %.3g\n",
      static_cast<unsigned long long>(flip.dist_pairs),
      static_cast<unsigned long long>(flip.sufficient_cases),
      static_cast<unsigned long long>(flip.sufficient_violations),
      flip.pinsker_max_excess);
  std::printf(
      "grid: %llu points, %llu pairs, %llu sufficient cases, %llu "
      "violations\n",
      static_cast<unsigned long long>(grid.points),
      static_cast<unsigned long long>(grid.dist_pairs),
      static_cast<unsigned long long>(grid.sufficient_cases),
      static_cast<unsigned long long>(grid.violations));

  nlohmann::ordered_json j;
  j["sampled"] = nlohmann::json::parse(flip.to_json());
  j["grid"] = {{"points", grid.points},
               {"dist_pairs", grid.dist_pairs},
               {"sufficient_cases", grid.sufficient_cases},
               {"violations", grid.violations},
               {"pinsker_max_excess", grid.pinsker_max_excess}};
  std::cout << j.dump() << "\n";
  if (!opt.out.empty()) {
    std::filesystem::create_directories(opt.out);
    write_text(opt.out + "/theory.json", j.dump() + "\n");
  }

  if (flip.sufficient_violations > 0 || grid.violations > 0)
    throw Error("sufficient-condition violations found");
  if (flip.pinsker_max_excess > 1e-12 || grid.pinsker_max_excess > 1e-12)
    throw Error("total variation exceeded the divergence bound");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "dualrr: dual-decoder generative reranking — joint teacher/student "
      "training, closed-loop simulation, sample-and-rank serving"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&opt](CLI::App* cmd, bool with_steps) {
    cmd->add_option("--config", opt.config, "flat key=value config file");
    cmd->add_option("--out", opt.out, "output directory");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&opt](const std::uint64_t& v) {
          opt.seed = v;
          opt.seed_set = true;
        },
        "seed override");
    if (with_steps)
      cmd->add_option_function<std::uint64_t>(
          "--steps", [&opt](const std::uint64_t& v) {
            opt.steps = v;
            opt.steps_set = true;
          },
          "step/record count override");
  };

  CLI::App* train = app.add_subcommand("train", "run the joint training loop");
  add_common(train, true);
  train->add_option("--checkpoint", opt.checkpoint, "resume from checkpoint");
  train->add_option("--mode", opt.mode,
                    "advantage normalization: ldro (default) or grpo");
  train->add_option("--ablate", opt.ablate,
                    "comma list: no_kd,no_rank_weight,no_batch_decouple");

  CLI::App* eval = app.add_subcommand(
      "eval", "ranking metrics for a checkpoint over an interaction log");
  eval->add_option("log", opt.input, "interaction log (JSONL)");
  add_common(eval, false);
  eval->add_option("--checkpoint", opt.checkpoint, "trained checkpoint");

  CLI::App* infer =
      app.add_subcommand("infer", "serve JSONL requests with a checkpoint");
  infer->add_option("requests", opt.input, "request file (JSONL)");
  infer->add_option("--out", opt.out, "output directory");
  infer->add_option("--checkpoint", opt.checkpoint, "trained checkpoint");

  CLI::App* simulate = app.add_subcommand(
      "simulate", "emit an interaction log from the synthetic stream");
  add_common(simulate, true);

  CLI::App* bench = app.add_subcommand(
      "bench-latency", "time sequential greedy decoding against serve()");
  add_common(bench, false);
  bench->add_option("--checkpoint", opt.checkpoint, "trained checkpoint");
  bench->add_option("--trials", opt.trials, "benchmark trials (default 1000)");

  CLI::App* verify = app.add_subcommand(
      "verify-theory", "check the ranking-stability bound numerically");
  add_common(verify, false);
  verify->add_option("--trials", opt.trials,
                     "sampled distribution pairs (default 2000)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(train)) return cmd_train(opt);
    if (app.got_subcommand(eval)) return cmd_eval(opt);
    if (app.got_subcommand(infer)) return cmd_infer(opt);
    if (app.got_subcommand(simulate)) return cmd_simulate(opt);
    if (app.got_subcommand(bench)) return cmd_bench(opt);
    if (app.got_subcommand(verify)) return cmd_verify_theory(opt);
  } catch (const UserError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
