// pufmoe: simulate delay-based strong PUFs and mount generic modelling
// attacks (MoPE / MMoPE) plus reference baselines on them.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pufmoe/baselines.hpp"
#include "pufmoe/dataset.hpp"
#include "pufmoe/errors.hpp"
#include "pufmoe/metrics.hpp"
#include "pufmoe/mmope.hpp"
#include "pufmoe/mope.hpp"
#include "pufmoe/puf.hpp"
#include "pufmoe/report.hpp"
#include "pufmoe/rng.hpp"
#include "pufmoe/training.hpp"
#include "pufmoe/version.hpp"

namespace {

using namespace pufmoe;

class UsageError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Splits a spec list on commas that start a new spec; the comma inside
// "ipuf:X,Y" stays attached to the ipuf token.
std::vector<std::string> split_spec_list(const std::string& text) {
  std::vector<std::string> parts;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == ',' && i + 1 < text.size() && std::isalpha(text[i + 1])) {
      parts.push_back(current);
      current.clear();
      continue;
    }
    current.push_back(text[i]);
  }
  if (!current.empty()) parts.push_back(current);
  if (parts.empty()) throw UsageError("empty --spec list");
  return parts;
}

std::string flag_string(std::uint64_t v) { return std::to_string(v); }

struct GenArgs {
  std::string specs;
  Index n = 64;
  std::uint64_t puf_seed = 1;
  std::uint64_t challenge_seed = 1;
  Index count = 0;
  std::string out;
};

int cmd_gen(const GenArgs& args) {
  const auto texts = split_spec_list(args.specs);
  std::vector<PufSpec> specs;
  std::vector<std::string> notes;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    PufSpec spec;
    try {
      spec = parse_puf_spec(texts[i], args.n,
                            derive_seed(args.puf_seed, static_cast<std::uint64_t>(i)));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    specs.push_back(spec);
    const PufInstance instance(spec);
    if (spec.kind == PufKind::FfXorApuf && spec.loops > 0) {
      std::ostringstream note;
      note << "task " << i << " (" << texts[i] << ") loops:";
      for (std::size_t c = 0; c < instance.loops().size(); ++c) {
        note << " chain" << c << "=";
        for (const auto& loop : instance.loops()[c]) {
          note << "(" << loop.tap << "," << loop.insert << ")";
        }
      }
      notes.push_back(note.str());
    }
  }

  const CrpSet set = generate_crps(specs, args.challenge_seed, args.count);
  save_crps(set, args.out);

  RunManifest manifest;
  manifest.subcommand = "gen";
  manifest.flags = {{"spec", args.specs},
                    {"n", flag_string(static_cast<std::uint64_t>(args.n))},
                    {"puf-seed", flag_string(args.puf_seed)},
                    {"challenge-seed", flag_string(args.challenge_seed)},
                    {"count", flag_string(static_cast<std::uint64_t>(args.count))},
                    {"out", args.out}};
  manifest.version = kToolkitVersion;
  manifest.outputs = {{args.out, digest_file(args.out)}};
  manifest.notes = notes;
  manifest.write(args.out + ".manifest.json");

  std::cout << "wrote " << set.count() << " CRPs (" << set.tasks
            << " task(s), n=" << set.n << ") to " << args.out << "\n";
  return 0;
}

struct AttackArgs {
  std::string in;
  std::string attack = "mope";
  Index train = 0;
  Index test = 10000;
  int k = 0;
  bool k_given = false;
  std::uint64_t seed = 1;
  std::string records = "runs.jsonl";
  std::string save_model;
  std::string label;
  std::string manifest;
  // config overrides
  int experts = 4;
  double tau = 1e-4;
  double lr = 1e-2;
  int max_epochs = 3000;
};

void check_budget(const CrpSet& set, Index train, Index test) {
  if (train < 1) throw UsageError("--train must be >= 1");
  if (test < 1) throw UsageError("--test must be >= 1");
  if (train + test > set.count()) {
    throw UsageError("train (" + std::to_string(train) + ") + test (" +
                     std::to_string(test) + ") exceeds the " +
                     std::to_string(set.count()) + " rows in the file");
  }
}

void finish_attack(const AttackArgs& args, AttackReport& report,
                   const std::function<void(std::ostream&)>& save_model) {
  report.label = args.label;
  append_record(args.records, report);
  std::cout << report.to_record() << "\n";

  RunManifest manifest;
  manifest.subcommand = "attack";
  manifest.flags = {{"in", args.in},
                    {"attack", args.attack},
                    {"train", flag_string(static_cast<std::uint64_t>(args.train))},
                    {"test", flag_string(static_cast<std::uint64_t>(args.test))},
                    {"seed", flag_string(args.seed)}};
  if (args.k_given) manifest.flags.emplace_back("k", std::to_string(args.k));
  manifest.version = kToolkitVersion;
  manifest.inputs = {{args.in, digest_file(args.in)}};
  manifest.outputs = {{"record", report.deterministic_digest()}};
  if (!args.save_model.empty()) {
    std::ofstream os(args.save_model, std::ios::binary | std::ios::trunc);
    if (!os) throw std::invalid_argument("cannot open '" + args.save_model + "'");
    save_model(os);
    os.close();
    manifest.outputs.emplace_back(args.save_model, digest_file(args.save_model));
  }
  if (!args.manifest.empty()) manifest.write(args.manifest);
}

int cmd_attack(const AttackArgs& args) {
  const CrpSet full = load_crps(args.in);
  if (full.tasks != 1) {
    throw UsageError("attack expects a single-task file; use attack-multi for " +
                     std::to_string(full.tasks) + " response columns");
  }
  check_budget(full, args.train, args.test);
  const CrpSet train = slice(full, 0, args.train);
  const CrpSet test = slice(full, args.train, args.test);

  if (args.attack == "mope") {
    if (args.k_given) {
      throw UsageError("mope requires no structure knowledge; drop --k");
    }
    MopeConfig cfg;
    cfg.num_experts = args.experts;
    cfg.tau = args.tau;
    cfg.learning_rate = args.lr;
    cfg.max_epochs = args.max_epochs;
    cfg.seed = args.seed;
    auto [net, report] = run_mope_attack(train, test, cfg);
    finish_attack(args, report, [&net](std::ostream& os) { net.save(os); });
    return 0;
  }

  if (!args.k_given) {
    throw UsageError("--k is required for the " + args.attack +
                     " baseline (it needs the XOR width)");
  }
  TrainSchedule sched;
  sched.learning_rate = args.lr;
  sched.max_epochs = args.max_epochs;
  if (args.attack == "lr") {
    auto [model, report] = train_lr_product(train, args.k, sched, args.seed);
    report.task_accuracy = evaluate_tasks(model, test);
    report.test_crps = test.count();
    finish_attack(args, report, [](std::ostream&) {});
    return 0;
  }
  if (args.attack == "mursi") {
    auto [model, report] = train_mursi(train, args.k, sched, args.seed);
    report.task_accuracy = evaluate_tasks(model.net, test);
    report.test_crps = test.count();
    finish_attack(args, report,
                  [&model](std::ostream& os) { model.net.save(os); });
    return 0;
  }
  throw UsageError("unknown attack '" + args.attack + "' (mope|lr|mursi)");
}

int cmd_attack_multi(const AttackArgs& args) {
  const CrpSet full = load_crps(args.in);
  if (full.tasks < 2) {
    throw UsageError("attack-multi needs a file with >= 2 response columns");
  }
  check_budget(full, args.train, args.test);
  const CrpSet train = slice(full, 0, args.train);
  const CrpSet test = slice(full, args.train, args.test);

  MmopeConfig cfg;
  cfg.tasks = full.tasks;
  cfg.tau = args.tau;
  cfg.learning_rate = args.lr;
  cfg.max_epochs = args.max_epochs;
  cfg.seed = args.seed;
  auto [net, reports] = run_mmope_attack(train, test, cfg);

  AttackReport combined;
  combined.attack = "mmope";
  combined.config = cfg.summary();
  combined.seed = args.seed;
  combined.train_crps = train.count();
  combined.test_crps = test.count();
  combined.epochs = reports.front().epochs;
  combined.wall_seconds = reports.front().wall_seconds;
  combined.label = args.label;
  for (auto& r : reports) {
    combined.task_accuracy.push_back(r.task_accuracy.at(0));
    r.label = args.label;
    append_record(args.records, r);
    std::cout << r.to_record() << "\n";
  }
  append_record(args.records, combined);
  std::cout << combined.to_record() << "\n";

  RunManifest manifest;
  manifest.subcommand = "attack-multi";
  manifest.flags = {{"in", args.in},
                    {"train", flag_string(static_cast<std::uint64_t>(args.train))},
                    {"test", flag_string(static_cast<std::uint64_t>(args.test))},
                    {"seed", flag_string(args.seed)}};
  manifest.version = kToolkitVersion;
  manifest.inputs = {{args.in, digest_file(args.in)}};
  manifest.outputs = {{"record", combined.deterministic_digest()}};
  if (!args.save_model.empty()) {
    std::ofstream os(args.save_model, std::ios::binary | std::ios::trunc);
    net.save(os);
    os.close();
    manifest.outputs.emplace_back(args.save_model, digest_file(args.save_model));
  }
  if (!args.manifest.empty()) manifest.write(args.manifest);
  return 0;
}

struct SearchArgs {
  std::string spec;
  Index n = 64;
  std::string attack = "mope";
  int k = 0;
  bool k_given = false;
  Index start = 0;
  double target = 0.90;
  int m = 3;
  Index budget_cap = 8'000'000;
  std::uint64_t seed = 1;
  std::string out;
};

double run_search_probe(const SearchArgs& args, Index count,
                        std::uint64_t instance_seed) {
  PufSpec spec;
  try {
    spec = parse_puf_spec(args.spec, args.n, instance_seed);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const CrpSet set =
      generate_crps({spec}, derive_seed(instance_seed, 0xC4A11E46), count + 10000);
  const CrpSet train = slice(set, 0, count);
  const CrpSet test = slice(set, count, 10000);
  const std::uint64_t train_seed = derive_seed(instance_seed, 0x7EA);
  if (args.attack == "mope") {
    MopeConfig cfg;
    cfg.seed = train_seed;
    auto [net, report] = run_mope_attack(train, test, cfg);
    return report.accuracy();
  }
  TrainSchedule sched;
  if (args.attack == "lr") {
    auto [model, report] = train_lr_product(train, args.k, sched, train_seed);
    return evaluate(model, test);
  }
  if (args.attack == "mursi") {
    auto [model, report] = train_mursi(train, args.k, sched, train_seed);
    return evaluate(model.net, test);
  }
  throw UsageError("unknown attack '" + args.attack + "' (mope|lr|mursi)");
}

void write_search_ledger(const SearchResult& result, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::invalid_argument("cannot open '" + path + "'");
  os << "count,passed,seeds,accuracies\n";
  for (const auto& trial : result.ledger) {
    os << trial.count << "," << (trial.passed ? 1 : 0) << ",";
    for (std::size_t i = 0; i < trial.seeds.size(); ++i) {
      os << (i ? ";" : "") << trial.seeds[i];
    }
    os << ",";
    for (std::size_t i = 0; i < trial.accuracies.size(); ++i) {
      os << (i ? ";" : "") << trial.accuracies[i];
    }
    os << "\n";
  }
}

int cmd_search(const SearchArgs& args) {
  if ((args.attack == "lr" || args.attack == "mursi") && !args.k_given) {
    throw UsageError("--k is required for the " + args.attack + " baseline");
  }
  if (args.attack == "mope" && args.k_given) {
    throw UsageError("mope requires no structure knowledge; drop --k");
  }
  SearchOptions options;
  options.start = args.start;
  options.target = args.target;
  options.instances = args.m;
  options.budget_cap = args.budget_cap;
  options.seed = args.seed;

  SearchResult result;
  try {
    result = crp_search(
        [&](Index count, std::uint64_t instance_seed) {
          const double acc = run_search_probe(args, count, instance_seed);
          std::cout << "  level " << count << " seed " << instance_seed
                    << " -> acc " << acc << "\n";
          return acc;
        },
        options);
  } catch (const SearchExhaustedWithLedger& e) {
    if (!args.out.empty()) write_search_ledger(e.partial(), args.out);
    throw;
  }

  std::cout << "minimal passing CRP count: " << result.minimal_passing << "\n";
  if (!args.out.empty()) {
    write_search_ledger(result, args.out);
    RunManifest manifest;
    manifest.subcommand = "search";
    manifest.flags = {{"spec", args.spec},
                      {"n", flag_string(static_cast<std::uint64_t>(args.n))},
                      {"attack", args.attack},
                      {"start", flag_string(static_cast<std::uint64_t>(args.start))},
                      {"target", std::to_string(args.target)},
                      {"m", std::to_string(args.m)},
                      {"seed", flag_string(args.seed)}};
    manifest.version = kToolkitVersion;
    manifest.outputs = {{args.out, digest_file(args.out)}};
    manifest.write(args.out + ".manifest.json");
  }
  return 0;
}

struct XcheckArgs {
  std::uint64_t seed = 1;
  std::string out = "xcheck.csv";
  bool markdown = false;
};

int cmd_xcheck(const XcheckArgs& args) {
  // Default desk-scale suite: the single-task budgets per target, the fixed
  // MoPE config against all of them, and a structure-mismatched Mursi model.
  const std::vector<std::pair<std::string, Index>> suite = {
      {"xor:2", 8000},   {"xor:3", 24000},       {"xor:4", 80000},
      {"xor:5", 240000}, {"ff:1-1:homo", 20000}, {"ipuf:1,5", 480000}};
  std::vector<PufSpec> targets;
  std::vector<Index> budgets;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    targets.push_back(parse_puf_spec(suite[i].first, 64,
                                     derive_seed(args.seed, 0xAA00 + i)));
    budgets.push_back(suite[i].second);
  }
  const std::vector<ModelSpec> models = {{"mope", 0}, {"mursi", 2}};

  const CrossMatrix grid = cross_matrix(
      models, targets, budgets,
      [&](const ModelSpec& model, const PufSpec& target, Index budget) {
        const CrpSet set = generate_crps(
            {target}, derive_seed(target.seed, 0xC4), budget + 10000);
        const CrpSet train = slice(set, 0, budget);
        const CrpSet test = slice(set, budget, 10000);
        const std::uint64_t train_seed = derive_seed(args.seed, target.seed);
        double acc = 0.0;
        if (model.attack == "mope") {
          MopeConfig cfg;
          cfg.seed = train_seed;
          auto [net, report] = run_mope_attack(train, test, cfg);
          acc = report.accuracy();
        } else if (model.attack == "mursi") {
          auto [m, report] = train_mursi(train, model.k, TrainSchedule{}, train_seed);
          acc = evaluate(m.net, test);
        } else {
          auto [m, report] = train_lr_product(train, model.k, TrainSchedule{}, train_seed);
          acc = evaluate(m, test);
        }
        std::cout << "  " << model.label() << " vs " << to_string(target)
                  << " @" << budget << " -> " << acc << "\n";
        return acc;
      });

  std::ofstream os(args.out, std::ios::trunc);
  os << grid.to_csv();
  os.close();
  if (args.markdown) std::cout << grid.to_markdown();

  RunManifest manifest;
  manifest.subcommand = "xcheck";
  manifest.flags = {{"seed", flag_string(args.seed)}, {"out", args.out}};
  manifest.version = kToolkitVersion;
  manifest.outputs = {{args.out, digest_file(args.out)}};
  manifest.write(args.out + ".manifest.json");
  return 0;
}

struct ReportArgs {
  std::string records = "runs.jsonl";
  std::string table = "II";
  std::string format = "md";
};

int cmd_report(const ReportArgs& args) {
  const auto records = read_records(args.records);
  const bool want_multi = args.table == "V";
  const bool want_ff = args.table == "III";

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> absent;
  for (const auto& r : records) {
    const bool is_multi = r.attack == "mmope" || r.attack == "share-bottom";
    if (want_multi != is_multi) continue;
    if (want_ff && r.label.rfind("xor:", 0) == 0) continue;
    if (!want_ff && !want_multi && r.label.rfind("xor:", 0) != 0) continue;
    std::ostringstream acc;
    acc.precision(4);
    acc << r.accuracy();
    std::ostringstream time;
    time.precision(3);
    time << r.wall_seconds << "s";
    rows.push_back({r.attack, r.label, std::to_string(r.train_crps), time.str(),
                    acc.str()});
  }
  if (rows.empty()) {
    std::ostringstream what;
    what << "no stored records match table " << args.table << " in '"
         << args.records << "'; expected runs labelled "
         << (want_multi ? "multi-task (mmope/share-bottom)"
                        : want_ff ? "ff:*/ipuf:*" : "xor:*");
    throw UsageError(what.str());
  }

  const std::vector<std::string> headers = {"Method", "k", "crp", "time", "acc"};
  if (args.format == "csv") {
    std::cout << "method,k,crp,time,acc\n";
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) {
        std::cout << row[c] << (c + 1 == row.size() ? "\n" : ",");
      }
    }
  } else {
    std::cout << markdown_table(headers, rows);
  }
  return 0;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"delay-based PUF simulation and generic modelling attacks"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* cgen = app.add_subcommand("gen", "generate a CRPB dataset");
  cgen->add_option("--spec", gen.specs, "puf spec(s), comma separated")->required();
  cgen->add_option("--n", gen.n, "stage count")->required();
  cgen->add_option("--puf-seed", gen.puf_seed, "instance seed (fans out per spec)");
  cgen->add_option("--challenge-seed", gen.challenge_seed, "challenge stream seed");
  cgen->add_option("--count", gen.count, "number of CRPs")->required();
  cgen->add_option("--out", gen.out, "output .crpb path")->required();

  AttackArgs attack;
  auto* cattack = app.add_subcommand("attack", "train one attack on a CRPB file");
  auto wire_attack = [&](CLI::App* cmd, bool multi) {
    cmd->add_option("--in", attack.in, "input .crpb")->required();
    if (!multi) {
      cmd->add_option("--attack", attack.attack, "mope|lr|mursi");
    }
    cmd->add_option("--train", attack.train, "training CRPs")->required();
    cmd->add_option("--test", attack.test, "held-out CRPs (default 10000)");
    if (!multi) {
      cmd->add_option("--k", attack.k, "XOR width (lr/mursi only)")
          ->each([&](const std::string&) { attack.k_given = true; });
    }
    cmd->add_option("--seed", attack.seed, "training seed");
    cmd->add_option("--records", attack.records, "record file (appended)");
    cmd->add_option("--save-model", attack.save_model, "checkpoint path");
    cmd->add_option("--label", attack.label, "target label for reporting");
    cmd->add_option("--manifest", attack.manifest, "manifest path");
    cmd->add_option("--experts", attack.experts, "mope expert count");
    cmd->add_option("--tau", attack.tau, "sparse softmax threshold");
    cmd->add_option("--lr", attack.lr, "initial learning rate");
    cmd->add_option("--max-epochs", attack.max_epochs, "epoch cap");
  };
  wire_attack(cattack, false);

  auto* cmulti = app.add_subcommand("attack-multi", "joint attack on all columns");
  wire_attack(cmulti, true);

  SearchArgs search;
  auto* csearch = app.add_subcommand("search", "bracket the minimal passing CRP budget");
  csearch->add_option("--spec", search.spec, "target puf spec")->required();
  csearch->add_option("--n", search.n, "stage count");
  csearch->add_option("--attack", search.attack, "mope|lr|mursi");
  csearch->add_option("--k", search.k, "XOR width (lr/mursi)")
      ->each([&](const std::string&) { search.k_given = true; });
  csearch->add_option("--start", search.start, "starting CRP count")->required();
  csearch->add_option("--target", search.target, "required accuracy");
  csearch->add_option("--m", search.m, "instances per level (all must pass)");
  csearch->add_option("--budget-cap", search.budget_cap, "abort above this count");
  csearch->add_option("--seed", search.seed, "search seed");
  csearch->add_option("--out", search.out, "ledger csv path");

  XcheckArgs xcheck;
  auto* cx = app.add_subcommand("xcheck", "cross-architecture generality matrix");
  cx->add_option("--seed", xcheck.seed, "suite seed");
  cx->add_option("--out", xcheck.out, "matrix csv path");
  cx->add_flag("--markdown", xcheck.markdown, "also print a markdown table");

  ReportArgs report;
  auto* crep = app.add_subcommand("report", "render stored records as a table");
  crep->add_option("--records", report.records, "record file");
  crep->add_option("--table", report.table, "II|III|V");
  crep->add_option("--format", report.format, "md|csv");

  CLI11_PARSE(app, argc, argv);

  if (cgen->parsed()) return cmd_gen(gen);
  if (cattack->parsed()) return cmd_attack(attack);
  if (cmulti->parsed()) return cmd_attack_multi(attack);
  if (csearch->parsed()) return cmd_search(search);
  if (cx->parsed()) return cmd_xcheck(xcheck);
  if (crep->parsed()) return cmd_report(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 4;
  } catch (const SearchExhausted& e) {
    std::cerr << "search exhausted: " << e.what() << "\n";
    return 5;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
