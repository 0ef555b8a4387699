// mats: collect datasets, measure coverage, train agents, evaluate and
// compare policies.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mats/mats.hpp"

using namespace mats;

namespace {

sim::SimConfig base_config(const std::string& path) {
  return path.empty() ? sim::SimConfig{} : sim::load_config(path);
}

void write_json(const nlohmann::json& j, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot open " + out + " for writing");
  os << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline RL for multi-access traffic splitting"};
  app.require_subcommand(1);

  // collect
  auto* collect = app.add_subcommand("collect", "Roll out a heuristic and write one file per episode");
  std::string c_policy, c_out, c_config;
  std::size_t c_episodes = 64, c_steps = 10000;
  std::uint64_t c_seed_start = 0;
  collect->add_option("--policy", c_policy, "throughput_argmax, system_default or utility_logistic")->required();
  collect->add_option("--episodes", c_episodes)->capture_default_str();
  collect->add_option("--steps", c_steps, "Steps per episode")->capture_default_str();
  collect->add_option("--seed-start", c_seed_start)->capture_default_str();
  collect->add_option("--out", c_out, "Output directory")->required();
  collect->add_option("--config", c_config, "Environment JSON");

  // coverage
  auto* coverage = app.add_subcommand("coverage", "Coverage of a dataset as JSON");
  std::string v_dataset, v_out;
  coverage->add_option("--dataset", v_dataset)->required()->check(CLI::ExistingDirectory);
  coverage->add_option("--out", v_out, "Output file (stdout when omitted)");

  // train
  auto* train = app.add_subcommand("train", "Train an agent on an offline dataset");
  std::string t_algo, t_dataset, t_out, t_resume, t_save_state;
  std::optional<double> t_alpha;
  double t_beta = 10.0;
  bool t_normalize = false, t_pure = false;
  std::optional<std::size_t> t_steps, t_batch;
  std::uint64_t t_seed = 0;
  std::vector<std::size_t> t_critic_hidden{64, 64}, t_actor_hidden{64, 64};
  train->add_option("--algo", t_algo)->required()->check(CLI::IsMember({"bc", "td3", "td3bc", "ptd3"}));
  train->add_option("--dataset", t_dataset)->required()->check(CLI::ExistingDirectory);
  train->add_option("--alpha", t_alpha, "td3bc: BC weight (2.5); ptd3: Fisher decay (1.0)");
  train->add_option("--beta", t_beta, "Pessimism weight")->capture_default_str();
  train->add_option("--normalize", t_normalize, "Normalize states with dataset statistics")->capture_default_str();
  train->add_flag("--pure-pessimism", t_pure, "PTD3 without the Q term");
  train->add_option("--steps", t_steps, "Training steps (10000)");
  train->add_option("--batch-size", t_batch, "Mini-batch size (256)");
  train->add_option("--critic-hidden", t_critic_hidden)->capture_default_str();
  train->add_option("--actor-hidden", t_actor_hidden)->capture_default_str();
  train->add_option("--seed", t_seed)->capture_default_str();
  train->add_option("--out", t_out, "Checkpoint file")->required();
  train->add_option("--save-state", t_save_state, "Also write the full training state here");
  train->add_option("--resume", t_resume, "Continue from a saved training state")->check(CLI::ExistingFile);

  // eval
  auto* evalc = app.add_subcommand("eval", "Evaluate a heuristic or a checkpoint");
  std::string e_policy, e_checkpoint, e_out, e_config;
  std::size_t e_episodes = 32, e_steps = 3200, e_workers = 1;
  std::uint64_t e_seed_start = 128;
  auto* e_pol_opt = evalc->add_option("--policy", e_policy, "Heuristic name");
  auto* e_ckpt_opt = evalc->add_option("--checkpoint", e_checkpoint, "Agent checkpoint")->check(CLI::ExistingFile);
  e_pol_opt->excludes(e_ckpt_opt);
  evalc->add_option("--episodes", e_episodes)->capture_default_str();
  evalc->add_option("--steps", e_steps)->capture_default_str();
  evalc->add_option("--seed-start", e_seed_start)->capture_default_str();
  evalc->add_option("--workers", e_workers)->capture_default_str();
  evalc->add_option("--config", e_config, "Environment JSON");
  evalc->add_option("--out", e_out, "Report file (stdout when omitted)");

  // compare
  auto* comparec = app.add_subcommand("compare", "Tabulate evaluation reports");
  std::vector<std::string> m_reports;
  std::string m_format = "markdown";
  comparec->add_option("reports", m_reports)->required()->check(CLI::ExistingFile);
  comparec->add_option("--format", m_format)->check(CLI::IsMember({"markdown", "csv"}))->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*collect) {
      auto cfg = base_config(c_config);
      cfg.steps_per_episode = c_steps;
      const auto kind = policy::heuristic_from_string(c_policy);
      auto ds = data::collect(cfg, kind, c_episodes, c_seed_start);
      data::save_dataset(ds, c_out);
      std::cerr << "wrote " << ds.episodes.size() << " episodes, " << ds.num_transitions() << " transitions to "
                << c_out << '\n';
    } else if (*coverage) {
      write_json(data::to_json(data::coverage(data::load_dataset(v_dataset))), v_out);
    } else if (*train) {
      const auto ds = data::load_dataset(t_dataset);
      std::optional<algo::Trainer> trainer;
      if (!t_resume.empty()) {
        trainer.emplace(ds, algo::load_train_state(t_resume));
        if (t_steps) trainer->state().bundle.hyper.steps = *t_steps;
      } else {
        const auto which = algo::algo_from_string(t_algo);
        algo::PtD3Hyper h;
        if (t_alpha) (which == algo::Algo::td3bc ? h.bc_alpha : h.fisher_alpha) = *t_alpha;
        h.beta = t_beta;
        h.normalize = t_normalize;
        h.pure_pessimism = t_pure;
        if (t_steps) h.steps = *t_steps;
        if (t_batch) h.batch_size = *t_batch;
        h.critic_hidden = t_critic_hidden;
        h.actor_hidden = t_actor_hidden;
        trainer.emplace(which, ds, h, t_seed);
      }
      trainer->run_to_end();
      algo::save_checkpoint(t_out, trainer->bundle());
      if (!t_save_state.empty()) algo::save_train_state(t_save_state, trainer->state());
      if (const auto& f = trainer->state().fisher)
        std::cerr << "Fisher updates " << f->updates() << ", last recompute residual " << f->last_residual() << '\n';
      std::cerr << "trained " << algo::to_string(trainer->bundle().algo) << " for " << trainer->state().step
                << " steps -> " << t_out << '\n';
    } else if (*evalc) {
      const auto cfg = base_config(e_config);
      eval::EvalReport rep;
      if (!e_checkpoint.empty()) {
        const auto agent = algo::load_checkpoint(e_checkpoint);
        rep = eval::evaluate(agent, cfg, e_episodes, e_steps, e_seed_start, e_workers,
                             std::filesystem::path(e_checkpoint).stem().string());
      } else if (!e_policy.empty()) {
        rep = eval::evaluate(policy::heuristic_from_string(e_policy), cfg, e_episodes, e_steps, e_seed_start,
                             e_workers);
      } else {
        throw std::invalid_argument("eval needs --policy or --checkpoint");
      }
      write_json(eval::to_json(rep), e_out);
    } else if (*comparec) {
      std::vector<eval::EvalReport> reports;
      for (const auto& p : m_reports) reports.push_back(eval::load_report(p));
      const auto rows = eval::compare(reports);
      std::cout << (m_format == "csv" ? eval::to_csv(rows) : eval::to_markdown(rows));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
