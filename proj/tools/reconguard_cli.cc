// Copyright 2026 The ReconGuard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Command-line front end for the experiment harness.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "reconguard/attacks.h"
#include "reconguard/errors.h"
#include "reconguard/harness.h"
#include "reconguard/metrics.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace reconguard;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;  // repeat seed; -1 uses the first configured one
};

ExperimentConfig resolve(const Common& c) {
  json doc = json::object();
  if (!c.config_path.empty()) doc = load_config(c.config_path).to_json();
  for (const std::string& o : c.overrides) apply_override(doc, o);
  ExperimentConfig cfg = ExperimentConfig::from_json(doc);
  cfg.validate();
  return cfg;
}

std::uint64_t repeat_seed(const Common& c, const ExperimentConfig& cfg) {
  return c.seed >= 0 ? static_cast<std::uint64_t>(c.seed) : cfg.repeat_seeds.front();
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "experiment config (JSON)");
  app->add_option("-s,--set", c.overrides, "override, e.g. defense.N=10")->take_all();
  app->add_option("--seed", c.seed, "repeat seed");
}

ListId parse_list(const std::string& s) {
  if (s == "defender-member") return ListId::kDefenderMember;
  if (s == "defender-nonmember") return ListId::kDefenderNonmember;
  if (s == "known-member") return ListId::kKnownMember;
  if (s == "known-nonmember") return ListId::kKnownNonmember;
  if (s == "eval-member") return ListId::kEvalMember;
  if (s == "eval-nonmember") return ListId::kEvalNonmember;
  throw ArgumentError("unknown list '" + s + "'");
}

DefenseConfig seeded_defense(const Experiment& e) {
  DefenseConfig d = e.config().defense;
  d.seed = e.defense_seed();
  return d;
}

std::string seed_name(const Experiment& e) { return "seed" + std::to_string(e.repeat_seed()); }

void print_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) w[i] = header[i].size();
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
  }
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::cout << (i ? "  " : "") << r[i] << std::string(w[i] - r[i].size(), ' ');
    }
    std::cout << '\n';
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << v;
  return os.str();
}

int cmd_data(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  const Dataset& d = e.dataset();
  const SplitSpec& s = e.split();
  const fs::path out = fs::path(cfg.output_dir) / "splits";
  fs::create_directories(out);
  write_json((out / (seed_name(e) + ".json")).string(), s);
  std::cout << "dataset " << cfg.dataset << ": " << d.size() << " images, " << d.num_classes()
            << " classes\n";
  print_table({"list", "size"}, {{"member", std::to_string(s.member_ids.size())},
                                 {"nonmember", std::to_string(s.nonmember_ids.size())},
                                 {"defender member", std::to_string(s.defender_member_ids.size())},
                                 {"defender nonmember", std::to_string(s.defender_nonmember_ids.size())},
                                 {"attacker member", std::to_string(s.attacker_known_member_ids.size())},
                                 {"attacker nonmember", std::to_string(s.attacker_known_nonmember_ids.size())},
                                 {"eval member", std::to_string(s.eval_member_ids.size())},
                                 {"eval nonmember", std::to_string(s.eval_nonmember_ids.size())}});
  return 0;
}

int cmd_train_classifier(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  const ClassifierModel& m = e.classifier();
  const double train = evaluate_accuracy(m, e.split().member_ids, e.dataset());
  const double test = evaluate_accuracy(m, e.split().nonmember_ids, e.dataset());
  std::cout << "train accuracy " << num(train) << "\ntest accuracy  " << num(test) << "\ngap attack     "
            << num(gap_attack_accuracy(train, test)) << "\ncheckpoints    " << e.checkpoint_dir() << '\n';
  return 0;
}

int cmd_train_diffusion(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  const DiffusionModel& m = e.diffusion();
  std::cout << "probe noise mse " << num(m.manifest().probe_mse_initial) << " -> "
            << num(m.manifest().probe_mse_final) << "\ncheckpoints " << e.checkpoint_dir() << '\n';
  return 0;
}

int cmd_fit_interval(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  const auto rec = e.fit_interval(seeded_defense(e));
  if (!rec) {
    std::cout << "scenario " << static_cast<int>(cfg.defense.scenario) << " needs no interval\n";
    return 0;
  }
  const fs::path out = fs::path(cfg.output_dir) / "intervals";
  fs::create_directories(out);
  write_json((out / (seed_name(e) + ".json")).string(), *rec);
  std::cout << json(*rec).dump(2) << '\n';
  return 0;
}

int cmd_defend(const Common& c, const std::string& list_name) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  const ListId list = parse_list(list_name);
  const DefenseConfig d = seeded_defense(e);
  const auto rec = e.fit_interval(d);
  const std::vector<Selection> sel = e.defended(list, d, rec ? std::optional(rec->interval) : std::nullopt);
  const IdList& ids = e.ids(list);
  const std::vector<PredictionVector>& orig = e.originals(list);
  const fs::path out = fs::path(cfg.output_dir) / "tables";
  fs::create_directories(out);
  const fs::path file = out / ("defended_" + list_name + "_" + seed_name(e) + ".csv");
  std::ofstream f(file);
  f << "sample_id,label,original_prediction,defended_prediction,logit,variant,in_interval\n";
  std::size_t inside = 0, changed = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Selection& s = sel[i];
    inside += s.in_interval;
    changed += s.prediction.predicted_label != orig[i].predicted_label;
    f << ids[i] << ',' << e.dataset()[ids[i]].label << ',' << orig[i].predicted_label << ','
      << s.prediction.predicted_label << ',' << s.logit << ',' << s.index << ',' << (s.in_interval ? 1 : 0)
      << '\n';
  }
  std::cout << ids.size() << " samples, " << inside << " in interval, " << changed << " label changes\nwrote "
            << file.string() << '\n';
  return 0;
}

int cmd_attack(const Common& c, const std::string& attack, const std::string& target) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  const TargetKind kind = parse_target(target);
  const DefenseConfig d = seeded_defense(e);
  std::optional<SelectionInterval> interval;
  if (kind != TargetKind::kUndefended) {
    if (const auto rec = e.fit_interval(d)) interval = rec->interval;
  }
  const TargetOutputs out = e.target_outputs(kind, d, interval);
  const AttackScores scores = e.run_attack(attack, kind, out, d, interval);
  const MetricBundle b = compute_metrics(scores);
  const fs::path dir = fs::path(cfg.output_dir);
  fs::create_directories(dir / "metrics");
  fs::create_directories(dir / "tables");
  write_json((dir / "metrics" / (seed_name(e) + "_" + attack + "_" + target + ".json")).string(), b);
  write_scores_csv((dir / "tables" / ("scores_" + seed_name(e) + "_" + attack + "_" + target + ".csv")).string(),
                   std::span(&scores, 1));
  std::cout << json(b).dump(2) << '\n';
  return 0;
}

int cmd_evaluate(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  if (c.seed >= 0) cfg.repeat_seeds = {static_cast<std::uint64_t>(c.seed)};
  const Report r = run_experiment(cfg);
  std::vector<std::vector<std::string>> rows;
  for (const SummaryRow& s : r.summary) {
    rows.push_back({s.attack_id, s.target_id, num(s.auc_mean), num(s.auc_std), num(s.accuracy_mean),
                    num(s.accuracy_std), std::to_string(s.runs)});
  }
  print_table({"attack", "target", "auc", "auc_sd", "acc", "acc_sd", "runs"}, rows);
  std::vector<std::vector<std::string>> util;
  for (const SeedReport& s : r.seeds) {
    for (const UtilityRow& u : s.utility) {
      util.push_back({std::to_string(s.repeat_seed), u.target_id, num(u.eval_accuracy),
                      num(u.eval_accuracy - u.undefended_eval_accuracy), std::to_string(u.label_mismatches)});
    }
  }
  std::cout << '\n';
  print_table({"seed", "target", "eval_acc", "delta", "mismatches"}, util);
  std::cout << "\nwrote " << (fs::path(cfg.output_dir) / "manifest.json").string() << '\n';
  return 0;
}

int cmd_sweep(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  std::vector<std::vector<std::string>> rows;
  for (const SweepCell& s : sweep_nt(e, cfg.sweep_N, cfg.sweep_T)) {
    rows.push_back({std::to_string(s.N), std::to_string(s.T), num(s.interval_lo), num(s.interval_hi),
                    num(s.best.auc), num(s.best.accuracy), s.best.auc_attack});
  }
  print_table({"N", "T", "lo", "hi", "best_auc", "best_acc", "attack"}, rows);
  return 0;
}

int cmd_scan(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  const std::vector<ScanRow> scan = interval_js_scan(e, scan_candidates(e, cfg.scan_intervals));
  std::vector<std::vector<std::string>> rows;
  std::vector<double> js, auc;
  for (const ScanRow& r : scan) {
    rows.push_back({num(r.interval.lo), num(r.interval.hi), num(r.js), num(r.eval_js), num(r.best.auc),
                    num(r.best.accuracy)});
    js.push_back(r.js);
    auc.push_back(r.best.auc);
  }
  print_table({"lo", "hi", "js", "eval_js", "best_auc", "best_acc"}, rows);
  if (scan.size() >= 2) std::cout << "\nspearman(js, auc) = " << num(spearman(js, auc)) << '\n';
  return 0;
}

int cmd_keep_generating(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  const KeepGeneratingSummary s = keep_generating_ablation(e);
  std::cout << "interval [" << num(s.interval.lo) << ", " << num(s.interval.hi) << "] at T=" << s.T
            << "\ncandidate coverage " << num(s.candidate_coverage) << "\nsamples " << s.samples
            << ", hit first " << s.first_hit << ", initially missing " << s.initially_missing
            << ", later hit " << s.later_hit << " within " << s.max_iters << " generations\n";
  return 0;
}

int cmd_latency(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  Experiment e(cfg, repeat_seed(c, cfg));
  std::vector<LatencyStats> stats{measure_latency(e, TargetKind::kUndefended, 0, cfg.latency_queries)};
  for (int N : cfg.latency_N) stats.push_back(measure_latency(e, TargetKind::kDefended, N, cfg.latency_queries));
  std::vector<std::vector<std::string>> rows;
  json j = json::array();
  for (const LatencyStats& s : stats) {
    rows.push_back({s.target_id, std::to_string(s.N), num(s.mean_ms), num(s.p95_ms), std::to_string(s.queries)});
    j.push_back({{"target_id", s.target_id},
                 {"N", s.N},
                 {"mean_ms", s.mean_ms},
                 {"p95_ms", s.p95_ms},
                 {"queries", s.queries}});
  }
  print_table({"target", "N", "mean_ms", "p95_ms", "queries"}, rows);
  fs::create_directories(fs::path(cfg.output_dir) / "metrics");
  write_json((fs::path(cfg.output_dir) / "metrics" / ("latency_" + seed_name(e) + ".json")).string(), j);
  return 0;
}

int cmd_report(const std::string& run_dir) {
  std::ifstream f(fs::path(run_dir) / "manifest.json");
  if (!f) throw ArgumentError("no manifest.json under " + run_dir);
  const json m = json::parse(f);
  std::vector<std::vector<std::string>> rows;
  for (const json& s : m.at("summary")) {
    rows.push_back({s.at("attack_id"), s.at("target_id"), num(s.at("auc_mean")), num(s.at("auc_std")),
                    num(s.at("accuracy_mean")), num(s.at("accuracy_std"))});
  }
  print_table({"attack", "target", "auc", "auc_sd", "acc", "acc_sd"}, rows);
  std::cout << '\n';
  std::vector<std::vector<std::string>> head;
  for (const auto& [target, v] : m.at("headline").items()) {
    head.push_back({target, num(v.at("best_auc")), num(v.at("best_accuracy"))});
  }
  print_table({"target", "best_auc", "best_acc"}, head);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Membership-inference defence by diffusion reconstruction"};
  app.require_subcommand(1);
  Common common;
  std::string list = "eval-member", attack = "loss", target = "undefended", run_dir = "runs/default";

  auto* data = app.add_subcommand("data", "load the dataset and write the split");
  auto* train_c = app.add_subcommand("train-classifier", "train or load the target classifier");
  auto* train_d = app.add_subcommand("train-diffusion", "train or load the diffusion model");
  auto* fit = app.add_subcommand("fit-interval", "fit the selection interval");
  auto* defend = app.add_subcommand("defend", "defend one id list and write the selections");
  defend->add_option("--list", list, "defender-member, eval-nonmember, ...");
  auto* att = app.add_subcommand("attack", "run one attack against one target");
  att->add_option("--attack", attack, "attack id");
  att->add_option("--target", target, "undefended, defended or cascaded");
  auto* eval = app.add_subcommand("evaluate", "run the full pipeline for every repeat seed");
  auto* sweep = app.add_subcommand("sweep", "best attack over the N x T grid");
  auto* scan = app.add_subcommand("scan-intervals", "attack strength against interval JS");
  auto* kg = app.add_subcommand("keep-generating", "keep-generating ablation");
  auto* lat = app.add_subcommand("latency", "per-query latency");
  for (CLI::App* a : {data, train_c, train_d, fit, defend, att, eval, sweep, scan, kg, lat}) add_common(a, common);
  auto* report = app.add_subcommand("report", "print the summary of a finished run");
  report->add_option("run_dir", run_dir, "run directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (data->parsed()) return cmd_data(common);
    if (train_c->parsed()) return cmd_train_classifier(common);
    if (train_d->parsed()) return cmd_train_diffusion(common);
    if (fit->parsed()) return cmd_fit_interval(common);
    if (defend->parsed()) return cmd_defend(common, list);
    if (att->parsed()) return cmd_attack(common, attack, target);
    if (eval->parsed()) return cmd_evaluate(common);
    if (sweep->parsed()) return cmd_sweep(common);
    if (scan->parsed()) return cmd_scan(common);
    if (kg->parsed()) return cmd_keep_generating(common);
    if (lat->parsed()) return cmd_latency(common);
    if (report->parsed()) return cmd_report(run_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
