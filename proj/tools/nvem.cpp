// Experiment harness: world generation, training, rollouts, scoring,
// ablation grids, and attention dumps.

#include "nvem/config.hpp"
#include "nvem/diagnostics.hpp"
#include "nvem/metrics.hpp"
#include "nvem/training.hpp"
#include "nvem/worldgen.hpp"

#include <CLI11.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace nvem;

namespace {

ExperimentConfig load_experiment(const std::string& config_path) {
  if (config_path.empty()) return ExperimentConfig::from_kv(KvConfig{});
  return ExperimentConfig::from_kv(KvConfig::parse_file(config_path));
}

// Model dims that must agree with the dataset are taken from its header.
ModelConfig resolve_model(ModelConfig m, const Dataset& data) {
  m.vocab_size = data.vocab.size();
  m.feature_dim = data.feature_dim;
  m.object_vocab = data.object_vocab;
  return m;
}

int run_training(const ExperimentConfig& cfg, const std::string& dataset_path,
                 const std::string& out_dir) {
  Dataset data = Dataset::load(dataset_path);
  ModelConfig mc = resolve_model(cfg.model, data);
  std::cout << "training: " << cfg.train.iterations << " iterations, batch "
            << cfg.train.batch << ", seed " << cfg.train.seed << "\n";
  TrainResult result = train(data, mc, cfg.train, out_dir);
  std::cout << "best val_unseen SR " << result.best_val_unseen_sr << " at iteration "
            << result.best_iteration << "\n";

  // score the retained checkpoint on every split, full size
  LoadedModel lm = load_checkpoint(result.best_checkpoint);
  std::vector<std::pair<TrajectoryRecord, EpisodeMetrics>> rows;
  std::vector<TrajectoryRecord> trajectories;
  ad::Tape tape;
  for (const char* split :
       {"train", "val_seen", "val_unseen", "val_unseen_distractor"}) {
    if (std::string(split) == "train") continue;  // evaluation splits only
    for (const Episode* ep : data.split(split)) {
      const NavGraph& g = data.world(ep->world_id);
      tape.clear();
      auto ro = rollout_episode(tape, *lm.model, g, *ep, Policy::Greedy, cfg.train);
      TrajectoryRecord rec{ep->episode_id, ep->world_id, ep->split, ro.path,
                           ep->gold_path};
      trajectories.push_back(rec);
      rows.emplace_back(rec, compute_metrics(g, rec, cfg.train.success_threshold));
    }
  }
  MetricsReport rep = aggregate(std::move(rows));
  save_trajectories(trajectories, out_dir + "/best_trajectories.jsonl");
  write_report(rep, out_dir + "/best_metrics.jsonl");
  std::string table = render_table(rep);
  std::ofstream(out_dir + "/best_metrics.txt") << table;
  std::cout << table;
  return 0;
}

struct CellResult {
  std::string name;
  std::map<std::string, EpisodeMetrics> medians;  // split -> median metrics
  int seeds_ok = 0;
  int seeds_failed = 0;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Reads the split summaries out of a run's best_metrics.jsonl.
std::map<std::string, EpisodeMetrics> read_split_means(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing metrics report: " + path);
  std::map<std::string, EpisodeMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.at("type") != "split") continue;
    const auto& m = j.at("metrics");
    EpisodeMetrics em;
    em.tl = m.at("tl");
    em.ne = m.at("ne");
    em.sr = m.at("sr");
    em.spl = m.at("spl");
    em.cls = m.at("cls");
    em.ndtw = m.at("ndtw");
    em.sdtw = m.at("sdtw");
    out[j.at("split").get<std::string>()] = em;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neighbor-view enhanced navigation experiments"};
  app.require_subcommand(1);

  // ---- generate-world ----
  auto* gen = app.add_subcommand("generate-world",
                                 "generate a dataset of worlds and episodes");
  std::string gen_config, gen_out = "dataset.jsonl";
  std::uint64_t gen_seed = 0;
  int gen_nodes = 0;
  double gen_distractor = -1.0;
  gen->add_option("--config", gen_config, "experiment config file");
  gen->add_option("--seed", gen_seed, "dataset seed (overrides config)");
  gen->add_option("--nodes", gen_nodes, "nodes per world (overrides config)");
  gen->add_option("--distractor-fraction", gen_distractor,
                  "distractor fraction (overrides config)");
  gen->add_option("--out", gen_out, "output dataset path")->required();

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_dataset, tr_out = "run";
  std::uint64_t tr_seed = 0;
  int tr_iters = -1;
  bool tr_dump_config = false;
  tr->add_option("--config", tr_config, "experiment config file");
  tr->add_option("--dataset", tr_dataset, "dataset path (overrides config)");
  tr->add_option("--out-dir", tr_out, "output directory");
  tr->add_option("--seed", tr_seed, "training seed (overrides config)");
  tr->add_option("--iterations", tr_iters, "iteration budget (overrides config)");
  tr->add_flag("--dump-config", tr_dump_config,
               "print the documented default config and exit");

  // ---- rollout ----
  auto* ro = app.add_subcommand("rollout", "greedy rollouts of a checkpoint");
  std::string ro_ckpt, ro_dataset, ro_split = "val_unseen", ro_out = "trajectories.jsonl";
  int ro_max_steps = 10;
  ro->add_option("--checkpoint", ro_ckpt)->required();
  ro->add_option("--dataset", ro_dataset)->required();
  ro->add_option("--split", ro_split, "episode split to roll out");
  ro->add_option("--max-steps", ro_max_steps, "step budget per episode");
  ro->add_option("--out", ro_out, "trajectory output path");

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "score trajectories against a dataset");
  std::string ev_traj, ev_dataset, ev_out = "report";
  ev->add_option("--trajectories", ev_traj)->required();
  ev->add_option("--dataset", ev_dataset)->required();
  ev->add_option("--out", ev_out, "report path prefix");

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "run an ablation grid");
  std::string ab_config, ab_dataset, ab_table = "modules", ab_out = "ablation";
  int ab_iters = -1, ab_jobs = 1;
  ab->add_option("--config", ab_config, "experiment config file");
  ab->add_option("--dataset", ab_dataset, "dataset path (overrides config)");
  ab->add_option("--table", ab_table, "grid: modules | subject | neighbors");
  ab->add_option("--out-dir", ab_out, "output directory");
  ab->add_option("--iterations", ab_iters, "per-cell iteration override");
  ab->add_option("--jobs", ab_jobs, "concurrent cell processes");

  // ---- dump-attention ----
  auto* da = app.add_subcommand("dump-attention",
                                "per-step attention trace for one episode");
  std::string da_ckpt, da_dataset, da_episode, da_out = "attention";
  da->add_option("--checkpoint", da_ckpt)->required();
  da->add_option("--dataset", da_dataset)->required();
  da->add_option("--episode", da_episode, "episode id (default: first val episode)");
  da->add_option("--out", da_out, "output path prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ExperimentConfig cfg = load_experiment(gen_config);
      if (gen_seed) cfg.data.seed = gen_seed;
      if (gen_nodes) cfg.data.world.nodes = gen_nodes;
      if (gen_distractor >= 0) cfg.data.world.distractor_fraction = gen_distractor;
      std::cout << "generating " << cfg.data.train_worlds << "+"
                << cfg.data.unseen_worlds << " worlds, "
                << cfg.data.train_episodes << " train episodes (seed "
                << cfg.data.seed << ")\n";
      Dataset data = build_dataset(cfg.data);
      data.save(gen_out);
      data.vocab.save(gen_out + ".vocab");
      std::cout << "wrote " << gen_out << " (" << data.worlds.size() << " worlds, "
                << data.episodes.size() << " episodes) and " << gen_out
                << ".vocab\n";
      return 0;
    }

    if (*tr) {
      if (tr_dump_config) {
        std::cout << documented_defaults();
        return 0;
      }
      ExperimentConfig cfg = load_experiment(tr_config);
      if (tr_seed) {
        cfg.train.seed = tr_seed;
        cfg.model.param_seed = mix_seed(tr_seed, fnv1a("params"));
      }
      if (tr_iters >= 0) cfg.train.iterations = tr_iters;
      std::string dataset = tr_dataset.empty() ? cfg.dataset_path : tr_dataset;
      return run_training(cfg, dataset, tr_out);
    }

    if (*ro) {
      Dataset data = Dataset::load(ro_dataset);
      LoadedModel lm = load_checkpoint(ro_ckpt);
      TrainConfig rc;
      rc.max_steps = ro_max_steps;
      std::vector<TrajectoryRecord> recs;
      ad::Tape tape;
      for (const Episode* ep : data.split(ro_split)) {
        const NavGraph& g = data.world(ep->world_id);
        tape.clear();
        auto r = rollout_episode(tape, *lm.model, g, *ep, Policy::Greedy, rc);
        recs.push_back({ep->episode_id, ep->world_id, ep->split, r.path,
                        ep->gold_path});
      }
      if (recs.empty()) throw std::runtime_error("no episodes in split " + ro_split);
      save_trajectories(recs, ro_out);
      std::cout << "wrote " << recs.size() << " trajectories to " << ro_out << "\n";
      return 0;
    }

    if (*ev) {
      Dataset data = Dataset::load(ev_dataset);
      auto recs = load_trajectories(ev_traj);
      std::vector<std::pair<TrajectoryRecord, EpisodeMetrics>> rows;
      for (const auto& rec : recs) {
        const NavGraph& g = data.world(rec.world_id);
        rows.emplace_back(rec, compute_metrics(g, rec));
      }
      MetricsReport rep = aggregate(std::move(rows));
      write_report(rep, ev_out + ".jsonl");
      std::string table = render_table(rep);
      std::ofstream(ev_out + ".txt") << table;
      std::cout << table;
      std::cout << "wrote " << ev_out << ".jsonl and " << ev_out << ".txt\n";
      return 0;
    }

    if (*ab) {
      ExperimentConfig cfg = load_experiment(ab_config);
      std::string dataset = ab_dataset.empty() ? cfg.dataset_path : ab_dataset;
      if (!fs::exists(dataset))
        throw std::runtime_error("dataset not found: " + dataset);
      fs::create_directories(ab_out);

      struct Cell {
        std::string name;
        std::map<std::string, std::string> overrides;
      };
      std::vector<Cell> cells;
      if (ab_table == "modules") {
        cells = {{"full", {{"model.modules", "action,subject,reference"}}},
                 {"no_action", {{"model.modules", "subject,reference"}}},
                 {"no_subject", {{"model.modules", "action,reference"}}},
                 {"no_reference", {{"model.modules", "action,subject"}}}};
      } else if (ab_table == "subject") {
        cells = {{"single",
                  {{"model.modules", "action,subject"},
                   {"model.fusion", "single"},
                   {"model.neighbors", "1"}}},
                 {"lang",
                  {{"model.modules", "action,subject"}, {"model.fusion", "lang"}}},
                 {"spa",
                  {{"model.modules", "action,subject"}, {"model.fusion", "spa"}}}};
      } else if (ab_table == "neighbors") {
        for (int I : {4, 8})
          for (int J : {4, 8, 12})
            cells.push_back({"I" + std::to_string(I) + "_J" + std::to_string(J),
                             {{"model.neighbors", std::to_string(I)},
                              {"model.objects", std::to_string(J)}}});
      } else {
        throw std::runtime_error("unknown ablation table: " + ab_table);
      }

      // one cell config file per cell, one training process per (cell, seed)
      struct Job {
        std::string cell;
        std::uint64_t seed;
        std::string dir;
        std::vector<std::string> args;
        int exit_code = -1;
      };
      std::vector<Job> jobs;
      for (const auto& cell : cells) {
        std::string cfg_path = ab_out + "/" + cell.name + ".cfg";
        {
          std::ofstream out(cfg_path);
          if (!ab_config.empty()) out << std::ifstream(ab_config).rdbuf();
          out << "\n# ablation cell overrides\n";
          for (const auto& [k, v] : cell.overrides) out << k << " = " << v << "\n";
          if (ab_iters >= 0) out << "train.iterations = " << ab_iters << "\n";
        }
        for (std::uint64_t seed : cfg.seeds) {
          Job j;
          j.cell = cell.name;
          j.seed = seed;
          j.dir = ab_out + "/" + cell.name + "_seed" + std::to_string(seed);
          j.args = {"train",      "--config", cfg_path, "--dataset", dataset,
                    "--out-dir",  j.dir,      "--seed",  std::to_string(seed)};
          jobs.push_back(std::move(j));
        }
      }

      std::size_t next = 0, running = 0;
      std::map<pid_t, std::size_t> live;
      auto launch = [&](std::size_t idx) {
        std::vector<char*> argv;
        static char self[] = "/proc/self/exe";
        argv.push_back(self);
        for (auto& a : jobs[idx].args) argv.push_back(a.data());
        argv.push_back(nullptr);
        pid_t pid = fork();
        if (pid < 0) throw std::runtime_error("fork failed");
        if (pid == 0) {
          std::string log = jobs[idx].dir + ".stdout";
          fs::create_directories(fs::path(jobs[idx].dir).parent_path());
          if (FILE* f = std::freopen(log.c_str(), "w", stdout)) (void)f;
          execv("/proc/self/exe", argv.data());
          _exit(127);
        }
        live[pid] = idx;
        ++running;
      };
      while (next < jobs.size() || running > 0) {
        while (next < jobs.size() && running < static_cast<std::size_t>(ab_jobs))
          launch(next++);
        int status = 0;
        pid_t pid = wait(&status);
        if (pid > 0) {
          auto it = live.find(pid);
          if (it != live.end()) {
            jobs[it->second].exit_code =
                WIFEXITED(status) ? WEXITSTATUS(status) : 128;
            std::cout << "finished " << jobs[it->second].cell << " seed "
                      << jobs[it->second].seed
                      << (jobs[it->second].exit_code == 0 ? "" : " (FAILED)")
                      << "\n";
            live.erase(it);
            --running;
          }
        }
      }

      // medians over seeds per cell; failed seeds recorded, grid continues
      std::vector<CellResult> results;
      for (const auto& cell : cells) {
        CellResult cr;
        cr.name = cell.name;
        std::map<std::string, std::vector<EpisodeMetrics>> by_split;
        for (const auto& job : jobs) {
          if (job.cell != cell.name) continue;
          if (job.exit_code != 0) {
            ++cr.seeds_failed;
            continue;
          }
          auto means = read_split_means(job.dir + "/best_metrics.jsonl");
          ++cr.seeds_ok;
          for (const auto& [split, m] : means) by_split[split].push_back(m);
        }
        for (const auto& [split, ms] : by_split) {
          EpisodeMetrics med;
          auto take = [&](auto get) {
            std::vector<double> v;
            for (const auto& m : ms) v.push_back(get(m));
            return median(v);
          };
          med.tl = take([](const EpisodeMetrics& m) { return m.tl; });
          med.ne = take([](const EpisodeMetrics& m) { return m.ne; });
          med.sr = take([](const EpisodeMetrics& m) { return m.sr; });
          med.spl = take([](const EpisodeMetrics& m) { return m.spl; });
          med.cls = take([](const EpisodeMetrics& m) { return m.cls; });
          med.ndtw = take([](const EpisodeMetrics& m) { return m.ndtw; });
          med.sdtw = take([](const EpisodeMetrics& m) { return m.sdtw; });
          cr.medians[split] = med;
        }
        results.push_back(std::move(cr));
      }

      std::ostringstream table;
      char buf[256];
      std::snprintf(buf, sizeof buf, "%-14s %6s | %-12s | %6s %6s %6s %6s\n", "cell",
                    "seeds", "split", "SR", "SPL", "nDTW", "sDTW");
      table << buf << std::string(70, '-') << "\n";
      nlohmann::json jout = nlohmann::json::array();
      for (const auto& cr : results) {
        for (const auto& [split, m] : cr.medians) {
          if (split == "val_seen" || split == "val_unseen" ||
              split == "val_unseen_distractor") {
            std::snprintf(buf, sizeof buf,
                          "%-14s %3d/%-2d | %-12s | %6.3f %6.3f %6.3f %6.3f\n",
                          cr.name.c_str(), cr.seeds_ok, cr.seeds_ok + cr.seeds_failed,
                          split.substr(4).c_str(), m.sr, m.spl, m.ndtw, m.sdtw);
            table << buf;
          }
          jout.push_back({{"cell", cr.name},
                          {"split", split},
                          {"seeds_ok", cr.seeds_ok},
                          {"seeds_failed", cr.seeds_failed},
                          {"median", metrics_to_json(m)}});
        }
      }
      std::ofstream(ab_out + "/table.txt") << table.str();
      std::ofstream(ab_out + "/results.jsonl") << jout.dump() << "\n";
      std::cout << table.str();
      std::cout << "wrote " << ab_out << "/table.txt and results.jsonl\n";
      return 0;
    }

    if (*da) {
      Dataset data = Dataset::load(da_dataset);
      LoadedModel lm = load_checkpoint(da_ckpt);
      const Episode* ep = nullptr;
      if (da_episode.empty()) {
        auto v = data.split("val_unseen");
        if (v.empty()) throw std::runtime_error("dataset has no val_unseen episodes");
        ep = v.front();
      } else {
        for (const auto& e : data.episodes)
          if (e.episode_id == da_episode) ep = &e;
        if (!ep) throw std::runtime_error("unknown episode id: " + da_episode);
      }
      nlohmann::json records = dump_attention(*lm.model, data, *ep);
      {
        std::ofstream out(da_out + ".jsonl");
        for (const auto& rec : records) out << rec.dump() << '\n';
      }
      std::string text = render_attention(records, *ep, data.vocab);
      std::ofstream(da_out + ".txt") << text;
      std::cout << text;
      std::cout << "wrote " << da_out << ".jsonl and " << da_out << ".txt\n";
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
