// mff: train, evaluate and probe contrastive time-series encoders.
//
//   mff train      --data FILE --out CKPT [--history CSV]
//   mff eval       --checkpoint CKPT --data FILE [--horizons 24,48] [--mode univariate]
//   mff ablate     --data FILE [--variants "full,w/o FM"]
//   mff robustness --data FILE --kind noise|missing --ratios 0.05,0.1 [--no-retrain]
//   mff transfer   --pretrain-data A --finetune-data B [--reinit-input]
//   mff synth      --spec SPEC --out CSV
//
// Every command but synth accepts --profile, --config FILE and one flag per
// config key (`--facm.mask-ratio 0.3`); later layers win.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "mff/cli.hpp"

namespace {

using mff::cli::RunConfig;

std::string flag_name(const std::string& key) {
  std::string out = "--" + key;
  for (char& c : out)
    if (c == '_') c = '-';
  return out;
}

/// Options shared by the config-driven commands.
struct ConfigOptions {
  std::string profile;
  std::string file;
  std::map<std::string, std::string> values;
  std::string seed;
  std::string stamp;

  void attach(CLI::App* cmd) {
    cmd->add_option("--profile", profile, "desk | paper | paper-ett-multivariate | paper-ett-univariate | "
                                          "paper-wth-multivariate | paper-wth-univariate (default: $MFF_PROFILE or desk)");
    cmd->add_option("--config", file, "key = value config file");
    cmd->add_option("--seed", seed, "shorthand for --train.seed");
    cmd->add_option("--stamp", stamp, "text recorded as the report timestamp");
    for (const auto& k : mff::config::keys()) {
      if (k.key == "profile") continue;
      cmd->add_option(flag_name(k.key), values[k.key], k.help);
    }
  }

  RunConfig resolve(CLI::App* cmd) const {
    std::vector<std::pair<std::string, std::string>> flags;
    for (const auto& k : mff::config::keys()) {
      if (k.key == "profile") continue;
      if (cmd->count(flag_name(k.key))) flags.emplace_back(k.key, values.at(k.key));
    }
    if (!seed.empty()) flags.emplace_back("train.seed", seed);
    return mff::config::resolve(profile, file, flags);
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

std::string default_report(const std::string& data, const std::string& what) {
  return std::filesystem::path(data).stem().string() + "." + what + ".json";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive time-series representation learning with frequency and time-domain modules"};
  app.require_subcommand(1);

  // train
  ConfigOptions train_cfg;
  std::string train_data, train_out, train_history;
  auto* train = app.add_subcommand("train", "train an encoder and write a checkpoint");
  train->add_option("--data", train_data, "ETT-format CSV")->required();
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--history", train_history, "loss history CSV (default: <out>.history.csv)");
  train_cfg.attach(train);

  // eval
  std::string eval_ckpt, eval_data, eval_horizons, eval_mode, eval_report, eval_stamp;
  auto* ev = app.add_subcommand("eval", "fit the ridge probe and score forecasting horizons");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint from `train`")->required();
  ev->add_option("--data", eval_data, "ETT-format CSV")->required();
  ev->add_option("--horizons", eval_horizons, "comma-separated horizons (default: from the checkpoint config)");
  ev->add_option("--mode", eval_mode, "multivariate | univariate");
  ev->add_option("--report", eval_report, "report path (default: <data stem>.eval.json)");
  ev->add_option("--stamp", eval_stamp, "text recorded as the report timestamp");

  // ablate
  ConfigOptions ablate_cfg;
  std::string ablate_data, ablate_variants, ablate_report;
  auto* ablate = app.add_subcommand("ablate", "train and score ablation variants under one seed");
  ablate->add_option("--data", ablate_data, "ETT-format CSV")->required();
  ablate->add_option("--variants", ablate_variants,
                     "comma-separated: full, w/o DA, w/o FM, w/o CM, w/o DA+FM, w/o DA+CM, w/o CM+FM, w/o Si "
                     "(default: full plus all seven)");
  ablate->add_option("--report", ablate_report, "report path (default: <data stem>.ablation.json)");
  ablate_cfg.attach(ablate);

  // robustness
  ConfigOptions robust_cfg;
  std::string robust_data, robust_kind = "noise", robust_ratios, robust_report;
  bool no_retrain = false;
  auto* robust = app.add_subcommand("robustness", "score models trained on perturbed training data");
  robust->add_option("--data", robust_data, "ETT-format CSV")->required();
  robust->add_option("--kind", robust_kind, "noise | missing");
  robust->add_option("--ratios", robust_ratios, "comma-separated ratios (default: 0.05,0.1,0.2,0.3 for noise, "
                                                "0.1,0.2,0.3,0.4 for missing)");
  robust->add_flag("--no-retrain", no_retrain, "keep the clean model, refit only the probe");
  robust->add_option("--report", robust_report, "report path (default: <data stem>.robustness.json)");
  robust_cfg.attach(robust);

  // transfer
  ConfigOptions transfer_cfg;
  std::string pre_data, ft_data, transfer_report, pre_epochs, ft_epochs;
  bool reinit_input = false;
  auto* transfer = app.add_subcommand("transfer", "pretrain on one dataset, fine-tune and score on another");
  transfer->add_option("--pretrain-data", pre_data, "source CSV")->required();
  transfer->add_option("--finetune-data", ft_data, "target CSV")->required();
  transfer->add_option("--pretrain-epochs", pre_epochs, "shorthand for --transfer.pretrain-epochs");
  transfer->add_option("--finetune-epochs", ft_epochs, "shorthand for --transfer.finetune-epochs");
  transfer->add_flag("--reinit-input", reinit_input, "redraw the input layer when feature counts differ");
  transfer->add_option("--report", transfer_report, "report path (default: <target stem>.transfer.json)");
  transfer_cfg.attach(transfer);

  // synth
  std::string synth_spec, synth_out;
  auto* synth = app.add_subcommand("synth", "generate an ETT-format CSV from a sinusoid spec");
  synth->add_option("--spec", synth_spec, "spec file")->required();
  synth->add_option("--out", synth_out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : mff::cli::kUsage;
  }

  namespace cli = mff::cli;
  try {
    if (*train) {
      const RunConfig cfg = train_cfg.resolve(train);
      const cli::Prepared data = cli::prepare(cli::load_data(train_data));
      cli::Trained t = cli::train_model(cfg, data.table, data.split);
      mff::save_checkpoint(cli::make_checkpoint(t.config, t.model, t.fit), std::filesystem::path(train_out));
      const std::string hist = train_history.empty() ? train_out + ".history.csv" : train_history;
      cli::write_text(hist, cli::history_csv(t.fit));
      std::cout << "trained " << t.fit.epochs_completed << " epochs on " << data.table.name;
      if (!t.fit.history.empty()) std::cout << ", final loss " << t.fit.history.back().total;
      std::cout << "\ncheckpoint: " << train_out << "\nhistory: " << hist << "\n";
    } else if (*ev) {
      cli::Restored r = cli::restore(mff::load_checkpoint(std::filesystem::path(eval_ckpt)));
      if (!eval_horizons.empty()) r.config.set("eval.horizons", eval_horizons);
      if (!eval_mode.empty()) r.config.set("data.mode", eval_mode);
      const cli::Prepared data = cli::prepare(cli::load_data(eval_data));
      mff::eval::ForecastReport rep = cli::evaluate(r.model, r.config, data);
      rep.timestamp = eval_stamp;
      const std::string out = eval_report.empty() ? default_report(eval_data, "eval") : eval_report;
      cli::write_text(out, cli::dump_json(mff::eval::to_json(rep)));
      std::cout << mff::eval::format_table(rep) << "report: " << out << "\n";
      for (const auto& s : rep.skipped) std::cerr << "warning: skipped horizon " << s.horizon << ": " << s.reason << "\n";
    } else if (*ablate) {
      const RunConfig cfg = ablate_cfg.resolve(ablate);
      std::vector<std::string> variants;
      if (ablate->count("--variants")) {
        variants = split_list(ablate_variants);
      } else {
        variants.push_back("full");
        for (const auto& v : cli::ablation_variants()) variants.push_back(v);
      }
      const cli::Prepared data = cli::prepare(cli::load_data(ablate_data));
      cli::ComparisonReport rep = cli::run_ablation(cfg, data, variants);
      rep.timestamp = ablate_cfg.stamp;
      const std::string out = ablate_report.empty() ? default_report(ablate_data, "ablation") : ablate_report;
      cli::write_text(out, cli::dump_json(cli::to_json(rep)));
      std::cout << cli::format_comparison(rep) << "report: " << out << "\n";
    } else if (*robust) {
      const RunConfig cfg = robust_cfg.resolve(robust);
      const auto kind = cli::parse_kind(robust_kind);
      std::vector<double> ratios;
      if (robust->count("--ratios")) {
        for (const auto& s : split_list(robust_ratios)) ratios.push_back(mff::config::parse_real("--ratios", s));
      } else if (kind == mff::data::PerturbationKind::noise) {
        ratios = {0.05, 0.1, 0.2, 0.3};
      } else {
        ratios = {0.1, 0.2, 0.3, 0.4};
      }
      const cli::Prepared data = cli::prepare(cli::load_data(robust_data));
      cli::ComparisonReport rep = cli::run_robustness(cfg, data, kind, ratios, !no_retrain);
      rep.timestamp = robust_cfg.stamp;
      const std::string out = robust_report.empty() ? default_report(robust_data, "robustness") : robust_report;
      cli::write_text(out, cli::dump_json(cli::to_json(rep)));
      std::cout << cli::format_comparison(rep) << "report: " << out << "\n";
    } else if (*transfer) {
      RunConfig cfg = transfer_cfg.resolve(transfer);
      if (!pre_epochs.empty()) cfg.set("transfer.pretrain_epochs", pre_epochs);
      if (!ft_epochs.empty()) cfg.set("transfer.finetune_epochs", ft_epochs);
      const cli::Prepared source = cli::prepare(cli::load_data(pre_data));
      const cli::Prepared target = cli::prepare(cli::load_data(ft_data));
      cli::TransferResult res = cli::run_transfer(cfg, source, target, reinit_input);
      res.report.timestamp = transfer_cfg.stamp;
      const std::string out = transfer_report.empty() ? default_report(ft_data, "transfer") : transfer_report;
      cli::write_text(out, cli::dump_json(mff::eval::to_json(res.report)));
      std::cout << mff::eval::format_table(res.report) << "report: " << out << "\n";
    } else if (*synth) {
      mff::data::write_csv(cli::run_synth(synth_spec), std::filesystem::path(synth_out));
      std::cout << "wrote " << synth_out << "\n";
    }
  } catch (const mff::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsage;
  }
  return cli::kOk;
}
