#include "doctest.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "dualrr/sampler.hpp"
#include "dualrr/train.hpp"
#include "json.hpp"

using namespace dualrr;

namespace {

TrainConfig tiny_cfg() {
  TrainConfig c;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.d_ffn = 32;
  c.model.enc_layers = 1;
  c.model.teacher_layers = 1;
  c.model.l_out = 3;
  c.model.d_item = 4;
  c.model.d_user = 4;
  c.model.d_query = 2;
  c.model.d_hist = 4;
  c.env.n_cand = 6;
  c.env.l_out = 3;
  c.env.latent_dim = 4;
  c.env.d_query = 2;
  c.env.seed = 5;
  c.group_size = 4;
  c.batch = 3;
  c.reward_hidden = 8;
  c.viewport = 2;
  c.total_steps = 0;  // manual stepping: warm-up window empty, policy loss on
  c.seed = 11;
  c.eval_records = 6;
  return c;
}

std::vector<InteractionRecord> make_batch(const TrainConfig& cfg, std::size_t n,
                                          std::uint64_t seed) {
  EnvConfig ec = cfg.env;
  ec.seed = seed;
  StreamSim sim(ec);
  return sim.next_batch(StreamSim::uniform_policy(seed + 1, ec.l_out), n);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("training config text format") {
  SUBCASE("serialize/parse round trip") {
    TrainConfig c = tiny_cfg();
    c.lambda_rl = 0.25;
    c.no_kd = true;
    c.alpha = {0.5, 2.0, 0.0, 1.5};
    c.env.base_rate = 0.1;
    c.seed = 1234567890123456789ull;
    const std::string text = serialize_train_config(c);
    TrainConfig back = parse_train_config(text);
    CHECK(serialize_train_config(back) == text);
    CHECK(back.lambda_rl == 0.25);
    CHECK(back.no_kd == true);
    CHECK(back.alpha[1] == 2.0);
    CHECK(back.env.base_rate == 0.1);
    CHECK(back.seed == 1234567890123456789ull);
  }

  SUBCASE("partial files keep defaults, tolerate comments and spacing") {
    TrainConfig c = parse_train_config("# a comment\n\n  batch = 7 \nno_kd=1\n");
    CHECK(c.batch == 7);
    CHECK(c.no_kd == true);
    CHECK(c.group_size == 12);      // untouched default
    CHECK(c.lambda_kd == 1.0);      // untouched default
  }

  SUBCASE("malformed input is rejected with the line number") {
    CHECK_THROWS_AS(parse_train_config("nonsense=3\n"), UserError);
    CHECK_THROWS_AS(parse_train_config("batch=3\nbatch=4\n"), UserError);
    CHECK_THROWS_AS(parse_train_config("batch=x\n"), UserError);
    CHECK_THROWS_AS(parse_train_config("no_kd=maybe\n"), UserError);
    CHECK_THROWS_AS(parse_train_config("just a line\n"), UserError);
    CHECK_THROWS_AS(parse_train_config("batch=-2\n"), UserError);
    try {
      parse_train_config("batch=3\nwat=1\n");
      CHECK(false);
    } catch (const UserError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  SUBCASE("validation catches inconsistent settings") {
    auto bad = [](void (*mut)(TrainConfig&)) {
      TrainConfig c = tiny_cfg();
      mut(c);
      CHECK_THROWS_AS(c.validate(), UserError);
    };
    CHECK_NOTHROW(tiny_cfg().validate());
    bad([](TrainConfig& c) { c.group_size = 1; });
    bad([](TrainConfig& c) { c.batch = 0; });
    bad([](TrainConfig& c) { c.lambda_kd = -0.1; });
    bad([](TrainConfig& c) { c.beta_entropy = -1.0; });
    bad([](TrainConfig& c) { c.tau_sample = 0.0; });
    bad([](TrainConfig& c) { c.viewport = 0; });
    bad([](TrainConfig& c) { c.delta_score = 0.0; });
    bad([](TrainConfig& c) { c.lr_dense = 0.0; });
    bad([](TrainConfig& c) { c.reward_hidden = 0; });
    bad([](TrainConfig& c) { c.warmup_frac = 1.5; });
    bad([](TrainConfig& c) { c.alpha[2] = -0.5; });
    bad([](TrainConfig& c) { c.eval_records = 0; });
    bad([](TrainConfig& c) { c.env.l_out = 2; });       // model/env slate mismatch
    bad([](TrainConfig& c) { c.model.d_item = 5; });    // feature width mismatch
    bad([](TrainConfig& c) { c.model.d_query = 3; });   // query width mismatch
  }

  SUBCASE("missing config file") {
    CHECK_THROWS_AS(load_train_config("no_such_config.cfg"), UserError);
  }
}

TEST_CASE("metrics row serialization is canonical") {
  StepMetrics m;
  m.step = 7;
  m.losses = {1.5, 0.25, 0.125, -0.5, 0.0625, 2.0, 3.5};
  m.rnet_loss = 0.75;
  m.group_reward = 1.25;
  m.lambda_rl = 0.5;
  m.rl_active = true;
  m.base_rate = 0.3;
  CHECK(metrics_to_json(m) ==
        "{\"step\":7,\"mle\":1.5,\"bpr\":0.25,\"kd\":0.125,\"ldro\":-0.5,"
        "\"kl_penalty\":0.0625,\"entropy_bonus\":2.0,\"total\":3.5,"
        "\"rnet\":0.75,\"group_reward\":1.25,\"lambda_rl\":0.5,"
        "\"rl_active\":true,\"base_rate\":0.3}");
}

TEST_CASE("greedy decode from a logits cube") {
  SUBCASE("argmax with duplicate masking") {
    // Row 0 picks column 2; row 1's raw argmax is also 2, so it must fall
    // back to its best unused column (0).
    Tensor cube = Tensor::from(2, 3, {0.0, 1.0, 5.0, 2.0, 1.0, 9.0});
    CHECK(greedy_slate(cube) == Slate{2, 0});
  }
  SUBCASE("ties break to the lowest index") {
    Tensor cube = Tensor::from(1, 3, {4.0, 4.0, 4.0});
    CHECK(greedy_slate(cube) == Slate{0});
  }
  SUBCASE("shape errors") {
    Tensor tall = Tensor::from(3, 2, {0, 1, 2, 3, 4, 5});
    CHECK_THROWS_AS(greedy_slate(tall), Error);
  }
}

TEST_CASE("group planning") {
  TrainConfig cfg = tiny_cfg();
  Trainer tr(cfg);
  const auto batch = make_batch(cfg, 3, 77);

  SUBCASE("shape and exposed-slate injection") {
    GroupPlan plan = tr.plan_groups(batch);
    REQUIRE(plan.groups.size() == batch.size());
    CHECK(plan.advantages.size() == batch.size() * cfg.group_size);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      REQUIRE(plan.groups[b].size() == cfg.group_size);
      CHECK(plan.groups[b][0] == batch[b].exposed);
      for (const Slate& s : plan.groups[b]) {
        REQUIRE(s.size() == cfg.model.l_out);
        std::set<std::size_t> uniq(s.begin(), s.end());
        CHECK(uniq.size() == s.size());
        for (std::size_t idx : s) CHECK(idx < cfg.env.n_cand);
      }
    }
    CHECK(std::isfinite(plan.mean_raw_reward));
    // Deterministic: planning twice gives the same result.
    GroupPlan again = tr.plan_groups(batch);
    CHECK(again.groups == plan.groups);
    CHECK(again.advantages == plan.advantages);
  }

  SUBCASE("posterior feedback from the exposed slate reaches the advantages") {
    GroupPlan base = tr.plan_groups(batch);
    // Realized rates replace the network estimates only in group slot 0, so
    // changing record 0's engagement must move the advantages. The logged
    // feedback can't equal both extremes, so at least one variant differs.
    auto all_off = batch, all_on = batch;
    for (Feedback& f : all_off[0].feedback) f = Feedback{false, false, false};
    for (Feedback& f : all_on[0].feedback) f = Feedback{true, true, true};
    GroupPlan p_off = tr.plan_groups(all_off);
    GroupPlan p_on = tr.plan_groups(all_on);
    CHECK(p_off.groups == base.groups);
    CHECK(p_on.groups == base.groups);
    CHECK((p_off.advantages != base.advantages ||
           p_on.advantages != base.advantages));
  }

  SUBCASE("normalization mode switches") {
    TrainConfig grpo = cfg;
    grpo.grpo_mode = true;
    TrainConfig nobatch = cfg;
    nobatch.no_batch_decouple = true;
    Trainer tg(grpo), tn(nobatch);
    GroupPlan p0 = tr.plan_groups(batch);
    GroupPlan pg = tg.plan_groups(batch);
    GroupPlan pn = tn.plan_groups(batch);
    // Same exploration everywhere; only the advantage normalization differs.
    CHECK(pg.groups == p0.groups);
    CHECK(pn.groups == p0.groups);
    CHECK(pg.mean_raw_reward == p0.mean_raw_reward);
    CHECK(pg.advantages == pn.advantages);
    CHECK(pg.advantages != p0.advantages);
    // Group-stage-only advantages have zero mean within every group.
    for (std::size_t b = 0; b < batch.size(); ++b) {
      double mean = 0.0;
      for (std::size_t g = 0; g < cfg.group_size; ++g)
        mean += pg.advantages[b * cfg.group_size + g];
      CHECK(std::abs(mean / cfg.group_size) < 1e-9);
    }
  }

  SUBCASE("record shape violations") {
    auto bad = batch;
    bad[1].exposed.pop_back();
    bad[1].feedback.pop_back();
    CHECK_THROWS_AS(tr.plan_groups(bad), Error);
    CHECK_THROWS_AS(tr.plan_groups({}), Error);
  }
}

TEST_CASE("prior slate scoring helper") {
  TrainConfig cfg = tiny_cfg();
  Trainer tr(cfg);
  const auto batch = make_batch(cfg, 1, 3);
  const InteractionRecord& rec = batch[0];
  const RewardVector rv = hybrid_reward(rec.exposed, rec.ctx, rec.cands,
                                        tr.reward_net(), {}, nullptr);
  const double no_rel = fused_prior_score(rec.exposed, rec.ctx, rec.cands,
                                          tr.reward_net(), {}, cfg.alpha);
  CHECK(no_rel == doctest::Approx(rv.values[0] + rv.values[1]).epsilon(1e-12));
  const double with_rel =
      fused_prior_score(rec.exposed, rec.ctx, rec.cands, tr.reward_net(),
                        rec.true_relevance, cfg.alpha);
  CHECK(with_rel > no_rel);  // ranking-quality priors join the score
}

TEST_CASE("single training steps") {
  SUBCASE("one closed-loop step produces finite losses and advances state") {
    TrainConfig cfg = tiny_cfg();
    Trainer tr(cfg);
    CHECK(tr.step_count() == 0);
    CHECK(tr.effective_lambda_rl() == 0.5);  // no warm-up window configured
    StepMetrics sm = tr.train_step();
    CHECK(tr.step_count() == 1);
    CHECK(sm.step == 0);
    CHECK(sm.rl_active);
    CHECK(sm.lambda_rl == 0.5);
    CHECK(sm.base_rate == 0.3);  // sinusoidal drift starts at its midpoint
    for (double v : {sm.losses.mle, sm.losses.bpr, sm.losses.kd, sm.losses.ldro,
                     sm.losses.kl_penalty, sm.losses.entropy_bonus,
                     sm.losses.total, sm.rnet_loss, sm.group_reward})
      CHECK(std::isfinite(v));
    CHECK(sm.losses.mle > 0.0);
    CHECK(sm.losses.kd > 0.0);
    CHECK(sm.losses.entropy_bonus > 0.0);
    CHECK(tr.ring().size() == 1);
    CHECK(tr.ring().back() == sm);
  }

  SUBCASE("parameters move under a step") {
    TrainConfig cfg = tiny_cfg();
    Trainer tr(cfg);
    std::vector<std::vector<double>> before;
    for (const ParamRef& p : tr.model().params()) before.push_back(p.tensor.values());
    tr.train_step();
    bool moved = false;
    const auto params = tr.model().params();
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].tensor.values() != before[i]) moved = true;
    CHECK(moved);
  }

  SUBCASE("warm-up keeps the policy loss off for the leading fraction") {
    TrainConfig cfg = tiny_cfg();
    cfg.total_steps = 10;
    cfg.warmup_frac = 0.5;
    Trainer tr(cfg);
    for (int s = 0; s < 7; ++s) {
      StepMetrics sm = tr.train_step();
      if (s < 5) {
        CHECK(sm.lambda_rl == 0.0);
        CHECK_FALSE(sm.rl_active);
        CHECK(sm.losses.ldro == 0.0);
        CHECK(sm.losses.kl_penalty == 0.0);
        CHECK(sm.group_reward == 0.0);
      } else {
        CHECK(sm.lambda_rl == 0.5);
        CHECK(sm.rl_active);
      }
    }
  }

  SUBCASE("distillation off plus policy loss off trains only the sequential branch") {
    TrainConfig cfg = tiny_cfg();
    cfg.no_kd = true;
    cfg.lambda_rl = 0.0;
    Trainer tr(cfg);
    std::vector<std::pair<std::string, std::vector<double>>> before;
    for (const ParamRef& p : tr.model().params())
      before.emplace_back(p.name, p.tensor.values());
    StepMetrics sm = tr.train_step();
    CHECK(sm.losses.kd == 0.0);
    CHECK(sm.losses.ldro == 0.0);
    bool teacher_side_moved = false;
    const auto params = tr.model().params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const bool is_student = params[i].name.rfind("student.", 0) == 0;
      const bool same = params[i].tensor.values() == before[i].second;
      if (is_student) {
        CHECK(same);  // parallel branch receives no gradient at all
      } else if (!same) {
        teacher_side_moved = true;
      }
    }
    CHECK(teacher_side_moved);
  }

  SUBCASE("external batches work and malformed ones are rejected") {
    TrainConfig cfg = tiny_cfg();
    Trainer tr(cfg);
    auto batch = make_batch(cfg, 2, 9);
    StepMetrics sm = tr.step_on_batch(batch);
    CHECK(std::isfinite(sm.losses.total));
    CHECK_THROWS_AS(tr.step_on_batch({}), Error);
    auto bad = batch;
    bad[0].exposed.pop_back();
    bad[0].feedback.pop_back();
    CHECK_THROWS_AS(tr.step_on_batch(bad), Error);
  }

  SUBCASE("a poisoned parameter aborts the step") {
    TrainConfig cfg = tiny_cfg();
    Trainer tr(cfg);
    auto params = tr.model().params();
    params[0].tensor.data()[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(tr.train_step(), Error);
  }
}

TEST_CASE("full-objective gradients match finite differences") {
  TrainConfig cfg = tiny_cfg();
  cfg.batch = 2;
  Trainer tr(cfg);
  const auto batch = make_batch(cfg, 2, 21);
  // The objective's gradient-blocked constants — group advantages and the
  // distillation/divergence anchors — must stay fixed while the probe
  // perturbs parameters, exactly as the backward pass treats them.
  const GroupPlan plan = tr.plan_groups(batch);
  const std::vector<Tensor> targets = tr.teacher_targets(batch);
  auto f = [&](const Tensor&) {
    return tr.combined_loss(batch, plan, 0.5, nullptr, nullptr, &targets);
  };
  // Freezing the anchors must not change the analytic gradient: they are
  // gradient-blocked either way, and at the unperturbed point the live
  // recomputation gives the same values. This ties the probe to the
  // objective the optimizer actually differentiates.
  auto grads_of = [&](bool frozen) {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = tr.combined_loss(batch, plan, 0.5, nullptr, nullptr,
                                   frozen ? &targets : nullptr);
    tape.backward(loss);
    std::vector<std::vector<double>> g;
    for (const ParamRef& p : tr.model().params())
      g.push_back(p.tensor.grad_values());
    for (const ParamRef& p : tr.model().params()) p.tensor.zero_grad();
    for (const ParamRef& p : tr.reward_net().params()) p.tensor.zero_grad();
    return std::make_pair(loss.item(), g);
  };
  const auto [live_loss, live_grads] = grads_of(false);
  const auto [frozen_loss, frozen_grads] = grads_of(true);
  CHECK(live_loss == frozen_loss);
  CHECK(live_grads == frozen_grads);

  // One lookup-style parameter, one encoder weight, one reward-net weight.
  for (const char* name : {"student.pos", "enc.ctx_proj.w", "rnet.w1"}) {
    Tensor target;
    for (const ParamRef& p : tr.model().params())
      if (p.name == name) target = p.tensor;
    for (const ParamRef& p : tr.reward_net().params())
      if (p.name == name) target = p.tensor;
    REQUIRE(target.defined());
    INFO("parameter: " << std::string(name));
    const std::vector<std::size_t> coords = {0, target.size() / 2,
                                             target.size() - 1};
    CHECK(grad_check(f, target, 1e-5, coords) < 1e-4);
  }
}

TEST_CASE("training determinism and checkpointing") {
  namespace fs = std::filesystem;

  SUBCASE("identical runs produce bit-identical state after 100 steps") {
    TrainConfig cfg = tiny_cfg();
    cfg.batch = 2;
    Trainer a(cfg), b(cfg);
    for (int i = 0; i < 100; ++i) {
      a.train_step();
      b.train_step();
    }
    a.save_checkpoint("tt_det_a.ckpt");
    b.save_checkpoint("tt_det_b.ckpt");
    CHECK(read_file("tt_det_a.ckpt") == read_file("tt_det_b.ckpt"));
    std::remove("tt_det_a.ckpt");
    std::remove("tt_det_b.ckpt");
  }

  SUBCASE("checkpoint state round-trips bit-exactly") {
    TrainConfig cfg = tiny_cfg();
    Trainer a(cfg);
    for (int i = 0; i < 3; ++i) a.train_step();
    a.save_checkpoint("tt_rt_a.ckpt");
    Trainer b(cfg, "tt_rt_a.ckpt");
    CHECK(b.step_count() == 3);
    CHECK(b.ring().size() == 3);
    CHECK(b.ring().back() == a.ring().back());
    b.save_checkpoint("tt_rt_b.ckpt");
    CHECK(read_file("tt_rt_a.ckpt") == read_file("tt_rt_b.ckpt"));
    std::remove("tt_rt_a.ckpt");
    std::remove("tt_rt_b.ckpt");
  }

  SUBCASE("resume reproduces the uninterrupted run bit-exactly") {
    TrainConfig cfg = tiny_cfg();
    cfg.batch = 2;
    Trainer full(cfg);
    for (int i = 0; i < 6; ++i) full.train_step();
    full.save_checkpoint("tt_full.ckpt");

    Trainer first_half(cfg);
    for (int i = 0; i < 3; ++i) first_half.train_step();
    first_half.save_checkpoint("tt_mid.ckpt");
    Trainer second_half(cfg, "tt_mid.ckpt");
    for (int i = 0; i < 3; ++i) second_half.train_step();
    second_half.save_checkpoint("tt_resumed.ckpt");

    CHECK(read_file("tt_full.ckpt") == read_file("tt_resumed.ckpt"));
    std::remove("tt_full.ckpt");
    std::remove("tt_mid.ckpt");
    std::remove("tt_resumed.ckpt");
  }

  SUBCASE("checkpoints refuse a different run's config, allow more steps") {
    TrainConfig cfg = tiny_cfg();
    Trainer a(cfg);
    a.train_step();
    a.save_checkpoint("tt_cfg.ckpt");
    TrainConfig other = cfg;
    other.lambda_kd = 0.7;
    CHECK_THROWS_AS(Trainer(other, "tt_cfg.ckpt"), UserError);
    TrainConfig longer = cfg;
    longer.total_steps = 50;
    CHECK_NOTHROW(Trainer(longer, "tt_cfg.ckpt"));
    CHECK_THROWS_AS(Trainer(cfg, "no_such.ckpt"), UserError);
    std::remove("tt_cfg.ckpt");
  }

  SUBCASE("evaluation snapshots are deterministic and well-formed") {
    TrainConfig cfg = tiny_cfg();
    Trainer tr(cfg);
    tr.train_step();
    MetricReport r1 = tr.evaluate();
    MetricReport r2 = tr.evaluate();
    CHECK(r1.to_json() == r2.to_json());
    CHECK(r1.samples == cfg.eval_records);
    REQUIRE(r1.values.size() == 4);
    CHECK(r1.values[0].first == "ptar");
    CHECK(r1.values[1].first == "rfr");
    CHECK(r1.values[2].first == "ndcg_vs_oracle");
    CHECK(r1.values[3].first == "group_reward");
    CHECK(r1.values[0].second >= 0.0);
    CHECK(r1.values[0].second <= 1.0);
    CHECK(r1.values[1].second >= 0.0);
    CHECK(r1.values[1].second <= 1.0);
    CHECK(r1.values[2].second >= 0.0);
    CHECK(r1.values[2].second <= 1.0);
    CHECK(std::isfinite(r1.values[3].second));
  }

  SUBCASE("run_training writes logs, snapshots, and checkpoints") {
    TrainConfig cfg = tiny_cfg();
    cfg.batch = 2;
    cfg.total_steps = 4;
    cfg.eval_every = 2;
    cfg.eval_records = 4;
    cfg.checkpoint_every = 2;
    const std::string dir = "tt_run_out";
    const std::string final_path = run_training(cfg, dir);
    CHECK(final_path == dir + "/checkpoint_final.ckpt");
    CHECK(fs::exists(dir + "/checkpoint_final.ckpt"));
    CHECK(fs::exists(dir + "/checkpoint_2.ckpt"));
    CHECK_FALSE(fs::exists(dir + "/checkpoint_4.ckpt"));  // final covers the end

    std::ifstream mf(dir + "/metrics.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(mf, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.at("step") == lines);
      CHECK(j.contains("total"));
      CHECK(j.contains("group_reward"));
      CHECK_FALSE(j.contains("wall_time"));
      ++lines;
    }
    CHECK(lines == 4);

    std::ifstream ef(dir + "/eval.jsonl");
    std::size_t eval_lines = 0;
    while (std::getline(ef, line)) {
      auto j = nlohmann::json::parse(line);
      CHECK(j.at("metrics").contains("ptar"));
      ++eval_lines;
    }
    CHECK(eval_lines == 2);
    fs::remove_all(dir);
  }

  SUBCASE("zero steps emits the initial checkpoint only") {
    TrainConfig cfg = tiny_cfg();
    cfg.total_steps = 0;
    const std::string dir = "tt_zero_out";
    run_training(cfg, dir);
    CHECK(fs::exists(dir + "/checkpoint_final.ckpt"));
    CHECK(read_file(dir + "/metrics.jsonl").empty());
    Trainer restored(cfg, dir + "/checkpoint_final.ckpt");
    CHECK(restored.step_count() == 0);
    fs::remove_all(dir);
  }

  SUBCASE("200-step smoke run at reduced serving scale") {
    TrainConfig cfg;
    cfg.model.d_model = 32;
    cfg.model.l_out = 4;
    cfg.env.n_cand = 8;
    cfg.env.l_out = 4;
    cfg.model.d_item = cfg.env.latent_dim;
    cfg.model.d_user = cfg.env.latent_dim;
    cfg.model.d_hist = cfg.env.latent_dim;
    cfg.model.d_query = cfg.env.d_query;
    cfg.batch = 16;
    cfg.total_steps = 200;
    cfg.eval_every = 100;
    cfg.eval_records = 16;
    cfg.seed = 404;
    const std::string dir = "tt_smoke_out";
    const auto t0 = std::chrono::steady_clock::now();
    run_training(cfg, dir);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    CHECK(secs < 300.0);
    Trainer done(cfg, dir + "/checkpoint_final.ckpt");
    CHECK(done.step_count() == 200);
    for (const StepMetrics& sm : done.ring())
      CHECK(std::isfinite(sm.losses.total));
    fs::remove_all(dir);
  }

  SUBCASE("run_training resume matches the uninterrupted run's files") {
    TrainConfig cfg = tiny_cfg();
    cfg.batch = 2;
    cfg.total_steps = 6;
    const std::string dir_a = "tt_resume_a";
    run_training(cfg, dir_a);

    TrainConfig half = cfg;
    half.total_steps = 3;
    const std::string dir_b = "tt_resume_b";
    const std::string mid = run_training(half, dir_b);
    run_training(cfg, dir_b, mid);

    CHECK(read_file(dir_a + "/metrics.jsonl") == read_file(dir_b + "/metrics.jsonl"));
    CHECK(read_file(dir_a + "/checkpoint_final.ckpt") ==
          read_file(dir_b + "/checkpoint_final.ckpt"));
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
  }
}
