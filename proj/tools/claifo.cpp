// Single workflow binary: expert training, demo collection, imitation with
// ablations, latent analysis, and tabular theory checks. Exit codes: 0 ok,
// 1 runtime/check failure, 2 usage error. Relative --out paths land under
// $CLAIFO_RUNS_DIR when that is set.

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <claifo/algorithm.hpp>
#include <claifo/analysis.hpp>
#include <claifo/expert.hpp>
#include <claifo/theory.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace claifo;

namespace {

constexpr const char* kVersion = "claifo 0.1.0";

int g_exit = 0;  // check-theory flips this on failed checks

fs::path resolve_out(const std::string& out) {
  fs::path p(out);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("CLAIFO_RUNS_DIR")) return fs::path(root) / p;
  return p;
}

json load_json(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot open ", path);
  return json::parse(f);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), "cannot open ", path.string());
  f << j.dump(2) << "\n";
  ensure(f.good(), "short write on ", path.string());
}

void write_manifest(const fs::path& dir, const std::string& command, uint64_t seed,
                    const json& config, const std::vector<std::string>& artifacts) {
  char stamp[32];
  const std::time_t now = std::time(nullptr);
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", std::gmtime(&now));
  write_json(dir / "manifest.json",
             json{{"run_id", command + "-s" + std::to_string(seed) + "-" + stamp},
                  {"command", command},
                  {"version", kVersion},
                  {"seed", seed},
                  {"created", stamp},
                  {"config", config},
                  {"artifacts", artifacts}});
}

struct ExpertArgs {
  std::string env_config, config, out;
  long steps = -1;
  uint64_t seed = 1;
};

void cmd_train_expert(const ExpertArgs& a) {
  EnvConfig env;
  if (!a.env_config.empty()) env = load_json(a.env_config).get<EnvConfig>();
  ExpertConfig tc;
  if (!a.config.empty()) tc = load_json(a.config).get<ExpertConfig>();
  if (a.steps > 0) tc.steps = a.steps;

  const fs::path dir = resolve_out(a.out);
  fs::create_directories(dir);
  Expert ex = train_expert(env, tc, a.seed);
  save_expert((dir / "expert.bin").string(), ex);
  write_json(dir / "env.json", env);

  const uint64_t es = derive_stream(a.seed, "cli-eval");
  const double g = expert_return(env, ex, tc.eval_episodes, es);
  const double orc = oracle_return(env, tc.eval_episodes, es);
  const double rnd = random_return(env, tc.eval_episodes, es);
  const double norm = normalized_score(g, rnd, orc);

  std::ofstream m(dir / "metrics.csv", std::ios::trunc);
  char line[256];
  std::snprintf(line, sizeof(line), "%ld,%.10g,%.10g,%.10g,%.10g", tc.steps, g, orc, rnd, norm);
  m << "steps,expert_return,oracle_return,random_return,normalized_score\n" << line << "\n";
  ensure(m.good(), "short write on metrics.csv");

  write_manifest(dir, "train-expert", a.seed, json{{"expert", tc}, {"env", env}},
                 {"expert.bin", "env.json", "metrics.csv"});
  std::printf("expert: return %.2f (oracle %.2f, random %.2f, normalized %.3f) -> %s\n", g, orc,
              rnd, norm, dir.string().c_str());
}

struct CollectArgs {
  std::string expert_ckpt, theme = "source", out;
  int episodes = 100;
  uint64_t seed = 1;
};

void cmd_collect(const CollectArgs& a) {
  require(a.theme == "source",
          "demos are collected in the source domain; --theme=", a.theme, " is not allowed");
  require(a.episodes >= 1, "need at least one episode");
  fs::path ckpt(a.expert_ckpt), env_path;
  if (fs::is_directory(ckpt)) {
    env_path = ckpt / "env.json";
    ckpt /= "expert.bin";
  } else {
    env_path = ckpt.parent_path() / "env.json";
  }
  EnvConfig env = load_json(env_path.string()).get<EnvConfig>();
  Expert ex = load_expert(ckpt.string());

  const fs::path dir = resolve_out(a.out);
  fs::create_directories(dir);
  DemoSet demos = collect_demos(ex, env, a.episodes, a.seed);
  std::vector<std::string> files;
  for (size_t i = 0; i < demos.count(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "ep_%04zu.bin", i);
    write_episode((dir / name).string(), demos.episode(i));
    files.emplace_back(name);
  }
  ensure(DemoSet::load_dir(dir.string()).count() == demos.count(),
         "demo round-trip count mismatch");

  write_manifest(dir, "collect", a.seed,
                 json{{"expert_ckpt", a.expert_ckpt},
                      {"episodes", a.episodes},
                      {"theme", a.theme},
                      {"env", env}},
                 files);
  std::printf("collected %d demo episodes (return %.2f) -> %s\n", a.episodes,
              demo_mean_return(demos), dir.string().c_str());
}

struct ImitateArgs {
  std::string variant = "claifo", mismatch = "light", preset, demos, out, config;
  std::string profile = "desk";
  long steps = -1;
  uint64_t seed = 1;
  bool sparse_env = false;
};

void cmd_imitate(const ImitateArgs& a) {
  AlgoConfig cfg = a.config.empty() ? make_profile(a.profile) : load_json(a.config).get<AlgoConfig>();
  cfg.variant = variant_from_string(a.variant);
  if (!a.preset.empty())
    cfg.preset = a.preset;
  else if (auto forced = variant_forced_preset(cfg.variant))
    cfg.preset = *forced;
  if (a.steps > 0) cfg.steps = a.steps;
  cfg.seed = a.seed;
  cfg.validate();

  EnvConfig base = make_profile_env(a.profile);
  base.image_size = cfg.hp.image_size;
  auto [source, target] = make_mismatch_pair(a.mismatch, base);
  (void)source;  // demos already carry the source domain
  if (a.sparse_env) target.reward_mode = RewardMode::sparse;

  DemoSet demos = DemoSet::load_dir(a.demos);
  require(demos.episode(0).height == cfg.hp.image_size, "demo frames are ",
          demos.episode(0).height, "px but this run wants ", cfg.hp.image_size, "px");

  const fs::path dir = resolve_out(a.out);
  TrainResult res = train(cfg, target, demos, dir.string());
  write_manifest(dir, "imitate", a.seed,
                 json{{"algo", cfg},
                      {"mismatch", a.mismatch},
                      {"demos", a.demos},
                      {"sparse_env", a.sparse_env},
                      {"profile", a.profile}},
                 {"config.json", "env.json", "metrics.csv", "checkpoint.bin"});
  std::printf("%s: final eval return %.2f over %d episodes -> %s\n", a.variant.c_str(),
              res.final_eval.mean, cfg.eval_episodes, dir.string().c_str());
}

struct AnalyzeArgs {
  std::string ckpt, mismatch = "light", out;
  int episodes = 10;
  uint64_t seed = 1;
};

void cmd_analyze(const AnalyzeArgs& a) {
  const fs::path run(a.ckpt);
  AlgoConfig rc = load_json((run / "config.json").string()).get<AlgoConfig>();
  EnvConfig base = load_json((run / "env.json").string()).get<EnvConfig>();
  auto [source, target] = make_mismatch_pair(a.mismatch, base);

  Rng init(derive_stream(a.seed, "analyze-init"));
  Encoder<float> enc("encoder", rc.net, init);
  auto params = enc.params();
  load_checkpoint((run / "checkpoint.bin").string(), params);

  auto optimal = [&](const PointMassState& s) { return oracle_action(s, base.goal); };
  LatentCorpus corpus =
      build_corpus(enc, optimal, source, target, a.episodes, rc.net.frame_stack, a.seed);
  PcaResult pca = pca_project(corpus);

  json ratio_field;
  if (pca.components.rows() < 2)
    std::fprintf(stderr, "warning: latent variance is degenerate (%ld components)\n",
                 static_cast<long>(pca.components.rows()));
  try {
    ratio_field = overlap_ratio(pca);
  } catch (const input_error& e) {
    std::fprintf(stderr, "warning: %s; overlap ratio not defined\n", e.what());
  }

  const fs::path dir = resolve_out(a.out);
  fs::create_directories(dir);
  write_corpus_csv((dir / "latents.csv").string(), corpus, pca);
  write_json(dir / "summary.json", json{{"explained_variance", pca.explained},
                                        {"components", pca.components.rows()},
                                        {"overlap_ratio", ratio_field}});
  write_manifest(dir, "analyze", a.seed,
                 json{{"ckpt", a.ckpt}, {"mismatch", a.mismatch}, {"episodes", a.episodes}},
                 {"latents.csv", "summary.json"});
  if (ratio_field.is_null())
    std::printf("overlap ratio undefined -> %s\n", dir.string().c_str());
  else
    std::printf("overlap ratio %.4f -> %s\n", ratio_field.get<double>(), dir.string().c_str());
}

struct TheoryArgs {
  std::string out;
  int instances = 100, horizon = 5;
  uint64_t seed = 1;
  bool inject_hat_fault = false;
};

void cmd_check_theory(const TheoryArgs& a) {
  require(a.instances >= 1 && a.horizon >= 1, "need positive instances/horizon");
  Rng rng(derive_stream(a.seed, "theory"));
  const PolicyKeying keying =
      a.inject_hat_fault ? PolicyKeying::history_and_hat : PolicyKeying::history;

  json rows = json::array();
  bool all_pass = true;
  for (int i = 0; i < a.instances; ++i) {
    TabularPOMDP p1 = random_pomdp(rng, 4, 2, 3, 3);
    std::vector<HistoryPolicy> pols;
    for (int j = 0; j < 3; ++j) pols.push_back(random_history_policy(rng, 3 + j, 2, keying));
    const Prop1Result r1 = check_prop1(p1, pols, a.horizon);
    const bool p1_pass = r1.max_deviation <= 1e-10;

    TabularPOMDP p2 = random_pomdp(rng, 5, 3, 2, 2);
    const TabularPolicy pe = random_tabular_policy(rng, 5, 3);
    const TabularPolicy pt = random_tabular_policy(rng, 5, 3);
    const Prop2Report r2 = check_prop2(p2, pe, pt);

    all_pass = all_pass && p1_pass && r2.holds;
    rows.push_back(json{{"instance", i},
                        {"prop1_deviation", r1.max_deviation},
                        {"prop1_histories", r1.histories},
                        {"prop1_pass", p1_pass},
                        {"prop2_gap", r2.gap},
                        {"prop2_bound", r2.bound},
                        {"prop2_holds", r2.holds}});
  }
  const json report = {{"instances", a.instances},
                       {"horizon", a.horizon},
                       {"hat_fault_injected", a.inject_hat_fault},
                       {"all_pass", all_pass},
                       {"rows", rows}};
  if (a.out.empty()) {
    std::printf("%s\n", report.dump(2).c_str());
  } else {
    const fs::path dir = resolve_out(a.out);
    fs::create_directories(dir);
    write_json(dir / "report.json", report);
    write_manifest(dir, "check-theory", a.seed,
                   json{{"instances", a.instances},
                        {"horizon", a.horizon},
                        {"hat_fault_injected", a.inject_hat_fault}},
                   {"report.json"});
    std::printf("%d/%d instances pass -> %s\n",
                static_cast<int>(all_pass ? a.instances : a.instances - 1), a.instances,
                dir.string().c_str());
  }
  if (!all_pass) g_exit = 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"C-LAIfO desk-scale laboratory"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  ExpertArgs ea;
  auto* te = app.add_subcommand("train-expert", "Train the true-state DDPG expert");
  te->add_option("--env-config", ea.env_config, "EnvConfig JSON")->check(CLI::ExistingFile);
  te->add_option("--config", ea.config, "ExpertConfig JSON")->check(CLI::ExistingFile);
  te->add_option("--steps", ea.steps, "override training steps");
  te->add_option("--seed", ea.seed, "RNG seed");
  te->add_option("--out", ea.out, "output run directory")->required();
  te->callback([&] { cmd_train_expert(ea); });

  CollectArgs ca;
  auto* co = app.add_subcommand("collect", "Roll out an expert and record demo episodes");
  co->add_option("--expert-ckpt", ca.expert_ckpt, "expert run dir or expert.bin")
      ->required()
      ->check(CLI::ExistingPath);
  co->add_option("--episodes", ca.episodes, "episodes to record (default 100)");
  co->add_option("--theme", ca.theme, "demo domain; only 'source' is valid");
  co->add_option("--seed", ca.seed, "RNG seed");
  co->add_option("--out", ca.out, "output demo directory")->required();
  co->callback([&] { cmd_collect(ca); });

  ImitateArgs ia;
  auto* im = app.add_subcommand("imitate", "Adversarial imitation from demo videos");
  im->add_option("--variant", ia.variant, "algorithm variant (claifo, laifo, rl+claifo, ...)");
  im->add_option("--mismatch", ia.mismatch, "visual mismatch: none|light|color|full");
  im->add_option("--aug-preset", ia.preset, "augmentation preset override");
  im->add_option("--demos", ia.demos, "demo directory")->required()->check(CLI::ExistingDirectory);
  im->add_option("--steps", ia.steps, "override training steps");
  im->add_option("--seed", ia.seed, "RNG seed");
  im->add_option("--profile", ia.profile, "scale profile: desk|spec (default desk)");
  im->add_option("--config", ia.config, "full AlgoConfig JSON (overrides profile)")
      ->check(CLI::ExistingFile);
  im->add_flag("--sparse-env", ia.sparse_env, "sparse env reward (for rl+ variants)");
  im->add_option("--out", ia.out, "output run directory")->required();
  im->callback([&] { cmd_imitate(ia); });

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("analyze", "PCA + overlap ratio of a trained encoder");
  an->add_option("--ckpt", aa.ckpt, "imitation run directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  an->add_option("--mismatch", aa.mismatch, "mismatch pair for the corpus");
  an->add_option("--episodes", aa.episodes, "episodes per corpus group");
  an->add_option("--seed", aa.seed, "RNG seed");
  an->add_option("--out", aa.out, "output directory")->required();
  an->callback([&] { cmd_analyze(aa); });

  TheoryArgs ta;
  auto* th = app.add_subcommand("check-theory", "Exact tabular proposition checks");
  th->add_option("--instances", ta.instances, "random instances (default 100)");
  th->add_option("--seed", ta.seed, "RNG seed");
  th->add_option("--horizon", ta.horizon, "history horizon (default 5)");
  th->add_option("--out", ta.out, "report directory (default: print to stdout)");
  th->add_flag("--inject-hat-fault", ta.inject_hat_fault,
               "negative test: let policies peek at the distractor");
  th->callback([&] { cmd_check_theory(ta); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const input_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return g_exit;
}
