// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"

namespace dst::cli {
namespace {

namespace fs = std::filesystem;

struct DataOptions {
  std::string root;
  std::string flist_train;
  std::string flist_dev;
  std::string flist_test;
  std::string ontology;
  std::string db;
  std::string asr = "live";

  void add_to(CLI::App& app) {
    app.add_option("--data", root, "Data root (DSTC2 layout)")->envname("DST_DATA_ROOT");
    app.add_option("--flist-train", flist_train, "Training file list");
    app.add_option("--flist-dev", flist_dev, "Development file list");
    app.add_option("--flist-test", flist_test, "Test file list");
    app.add_option("--ontology", ontology, "Ontology JSON (default <data>/ontology_dstc2.json)");
    app.add_option("--db", db, "Database JSON (default <data>/db.json)");
    app.add_option("--asr", asr, "ASR hypothesis source")->check(CLI::IsMember({"live", "batch"}));
  }

  fs::path require_root() const {
    if (root.empty()) throw ConfigError("--data (or DST_DATA_ROOT) is required");
    return root;
  }

  fs::path list(const std::string& split) const {
    const std::string& given =
        split == "train" ? flist_train : (split == "dev" ? flist_dev : flist_test);
    return given.empty() ? require_root() / ("dstc2_" + split + ".flist") : fs::path(given);
  }

  bool has_list(const std::string& split) const {
    const std::string& given =
        split == "train" ? flist_train : (split == "dev" ? flist_dev : flist_test);
    return !given.empty() || (!root.empty() && fs::exists(list(split)));
  }

  std::vector<Dialogue> load(const std::string& split) const {
    return load_dstc2(require_root(), list(split),
                      asr == "batch" ? AsrSource::batch : AsrSource::live);
  }

  Database database() const {
    return Database::load(db.empty() ? (require_root() / "db.json").string() : db);
  }

  Ontology load_ontology() const {
    return Ontology::load(ontology.empty() ? (require_root() / "ontology_dstc2.json").string()
                                           : ontology);
  }
};

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::array<double, 3> parse_ratios(const std::string& text) {
  std::array<double, 3> r{};
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) throw ConfigError("--ratios takes exactly three values");
    try {
      r[i++] = std::stod(part);
    } catch (const std::exception&) {
      throw ConfigError("--ratios: '" + part + "' is not a number");
    }
  }
  if (i != 3) throw ConfigError("--ratios takes exactly three values");
  return r;
}

std::string state_columns(const GoalState& g) {
  return "food=" + g.food() + "\tarea=" + g.area() + "\tpricerange=" + g.pricerange();
}

}  // namespace

void run_track(const Tracker& model, const Database& db, std::istream& in, std::ostream& out) {
  TrackerSession<float> session(model, db);
  Role next = Role::system;
  std::string line;
  while (std::getline(in, line)) {
    std::string text = line;
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    if (text == ":quit") break;
    if (text == ":reset") {
      session.reset();
      next = Role::system;
      out << "reset\t-\t" << state_columns(session.current()) << '\n';
      continue;
    }
    Role role = next;
    const auto colon = text.find(':');
    if (colon != std::string::npos) {
      const std::string tag = to_lower(text.substr(0, colon));
      if (tag == "system" || tag == "sys" || tag == "s") {
        role = Role::system;
        text.erase(0, colon + 1);
      } else if (tag == "user" || tag == "usr" || tag == "u") {
        role = Role::user;
        text.erase(0, colon + 1);
      }
    }
    next = role == Role::system ? Role::user : Role::system;
    for (const auto& word : tokenize(text)) {
      const GoalState g = session.track_word(word, role);
      out << (role == Role::system ? "system" : "user") << '\t' << word << '\t'
          << state_columns(g) << '\n';
    }
  }
}

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Word-by-word neural dialogue state tracker"};
  app.require_subcommand(1);
  DataOptions data;

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a tracker with early stopping");
  data.add_to(*train_cmd);
  std::string model_name = "indep";
  std::string out_path;
  std::string log_path;
  std::string config_path;
  std::string loss_scope;
  TrainConfig flags;
  train_cmd->add_option("--model", model_name, "Architecture")
      ->check(CLI::IsMember({"indep", "joint", "encdec"}));
  train_cmd->add_option("--out", out_path, "Checkpoint output path")->required();
  train_cmd->add_option("--log", log_path, "Training log (JSON lines; default <out>.log.jsonl)");
  train_cmd->add_option("--config", config_path, "Training config JSON");
  auto* o_seed = train_cmd->add_option("--seed", flags.seed);
  auto* o_epochs = train_cmd->add_option("--epochs", flags.max_epochs);
  auto* o_batch = train_cmd->add_option("--batch-size", flags.batch_size);
  auto* o_embed = train_cmd->add_option("--embed-dim", flags.embed_dim);
  auto* o_hidden = train_cmd->add_option("--hidden-dim", flags.hidden_dim);
  auto* o_keep = train_cmd->add_option("--dropout-keep", flags.dropout_keep);
  auto* o_scope = train_cmd->add_option("--loss-scope", loss_scope)
                      ->check(CLI::IsMember({"full_history", "last_turn"}));
  auto* o_buckets = train_cmd->add_option("--buckets", flags.n_buckets);
  auto* o_lr = train_cmd->add_option("--lr", flags.learning_rate);
  auto* o_patience = train_cmd->add_option("--patience", flags.patience_epochs);
  auto* o_clip = train_cmd->add_option("--clip-norm", flags.clip_norm, "Global-norm clip (0 = off)");
  auto* o_min_count = train_cmd->add_option("--min-count", flags.min_count);
  bool dev_is_train = false;
  train_cmd->add_flag("--dev-is-train", dev_is_train, "Validate on the training set");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (schedule-2 accuracy)");
  data.add_to(*eval_cmd);
  std::string ckpt_path;
  std::string split = "test";
  std::string report_path;
  std::string schedule = "joint";
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval_cmd->add_option("--split", split, "Which file list to score")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cmd->add_option("--out", report_path, "Machine-readable report (JSON)");
  eval_cmd->add_option("--schedule", schedule, "Schedule-2 onset rule")
      ->check(CLI::IsMember({"joint", "per-slot"}));

  // resplit
  auto* resplit_cmd = app.add_subcommand("resplit", "Merge all splits and re-split by dialogue");
  data.add_to(*resplit_cmd);
  std::string ratios_text = "0.8,0.1,0.1";
  std::uint64_t resplit_seed = 0;
  std::string resplit_out;
  resplit_cmd->add_option("--ratios", ratios_text, "train,dev,test ratios");
  resplit_cmd->add_option("--seed", resplit_seed);
  resplit_cmd->add_option("--out", resplit_out, "Output directory for file lists")->required();

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "Dataset statistics");
  data.add_to(*stats_cmd);
  std::string stats_out;
  stats_cmd->add_option("--out", stats_out, "Write statistics as JSON");

  // track
  auto* track_cmd = app.add_subcommand("track", "Incremental word-by-word tracking");
  std::string track_ckpt;
  std::string track_db;
  std::string transcript;
  track_cmd->add_option("--ckpt", track_ckpt, "Checkpoint")->required();
  track_cmd->add_option("--db", track_db, "Database JSON")->required();
  track_cmd->add_option("--transcript", transcript, "Read lines from a file instead of stdin");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic micro-corpus in DSTC2 layout");
  std::string synth_out;
  std::size_t synth_n = 20;
  std::uint64_t synth_seed = 7;
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--dialogues", synth_n);
  synth_cmd->add_option("--seed", synth_seed);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (train_cmd->parsed()) {
      TrainConfig cfg;
      if (!config_path.empty()) {
        std::ifstream cf(config_path);
        if (!cf) throw LoadError("cannot open config " + config_path);
        nlohmann::json j;
        try {
          cf >> j;
        } catch (const nlohmann::json::exception& e) {
          throw ConfigError("config " + config_path + ": " + e.what());
        }
        cfg.merge_json(j);
      }
      if (o_seed->count()) cfg.seed = flags.seed;
      if (o_epochs->count()) cfg.max_epochs = flags.max_epochs;
      if (o_batch->count()) cfg.batch_size = flags.batch_size;
      if (o_embed->count()) cfg.embed_dim = flags.embed_dim;
      if (o_hidden->count()) cfg.hidden_dim = flags.hidden_dim;
      if (o_keep->count()) cfg.dropout_keep = flags.dropout_keep;
      if (o_scope->count()) cfg.loss_scope = parse_loss_scope(loss_scope);
      if (o_buckets->count()) cfg.n_buckets = flags.n_buckets;
      if (o_lr->count()) cfg.learning_rate = flags.learning_rate;
      if (o_patience->count()) cfg.patience_epochs = flags.patience_epochs;
      if (o_clip->count()) cfg.clip_norm = flags.clip_norm;
      if (o_min_count->count()) cfg.min_count = flags.min_count;
      cfg.validate();

      const auto kind = parse_model_kind(model_name);
      const auto train_set = data.load("train");
      const auto dev_set = dev_is_train ? train_set : data.load("dev");
      const auto db = data.database();
      const auto ontology = data.load_ontology();
      if (log_path.empty()) log_path = out_path + ".log.jsonl";
      std::ofstream log(log_path);
      if (!log) throw LoadError("cannot write training log " + log_path);
      nlohmann::json effective = cfg.to_json();
      effective["model"] = to_string(kind);
      log << nlohmann::json{{"config", effective}}.dump() << '\n';
      out << "training " << to_string(kind) << " on " << train_set.size() << " dialogues, dev "
          << dev_set.size() << '\n';
      auto result = train<float>(kind, train_set, dev_set, db, ontology, cfg,
                                 [&](const EpochRecord& r) {
                                   log << r.to_json().dump() << '\n' << std::flush;
                                   out << "epoch " << r.epoch << "  loss " << std::fixed
                                       << std::setprecision(4) << r.train_loss << "  dev "
                                       << std::setprecision(4) << r.dev_accuracy << "  ("
                                       << std::setprecision(1) << r.wall_seconds << "s)\n"
                                       << std::flush;
                                 });
      save_checkpoint(*result.model,
                      {result.best_dev_accuracy, result.best_epoch, effective}, out_path);
      out << "best epoch " << result.best_epoch << " dev " << std::setprecision(4)
          << result.best_dev_accuracy << " -> " << out_path << '\n';
      return kOk;
    }

    if (eval_cmd->parsed()) {
      const auto ck = load_checkpoint(ckpt_path);
      const auto dialogues = data.load(split);
      const auto db = data.database();
      auto report = evaluate(*ck.model, dialogues, db,
                             schedule == "joint" ? ScheduleMode::joint_onset
                                                 : ScheduleMode::per_slot_onset,
                             split);
      out << report.to_table();
      if (!report_path.empty()) {
        auto j = report.to_json();
        j["checkpoint"] = ckpt_path;
        j["train_config"] = ck.meta.train_config;
        j["schedule"] = schedule;
        write_json(report_path, j);
      }
      return kOk;
    }

    if (resplit_cmd->parsed()) {
      const auto ratios = parse_ratios(ratios_text);
      split_sizes(1, ratios);  // validates before any loading
      std::vector<std::string> ids;
      std::set<std::string> seen;
      for (const char* s : {"train", "dev", "test"})
        for (auto& id : read_file_list(data.list(s)))
          if (seen.insert(id).second) ids.push_back(std::move(id));
      const auto parts = resplit_items(ids, ratios, resplit_seed);
      fs::create_directories(resplit_out);
      const fs::path dir(resplit_out);
      write_file_list(dir / "dstc2_train.flist", parts[0]);
      write_file_list(dir / "dstc2_dev.flist", parts[1]);
      write_file_list(dir / "dstc2_test.flist", parts[2]);
      write_json(dir / "manifest.json",
                 {{"seed", resplit_seed},
                  {"ratios", ratios},
                  {"sizes", {{"train", parts[0].size()}, {"dev", parts[1].size()}, {"test", parts[2].size()}}},
                  {"sources",
                   {data.list("train").string(), data.list("dev").string(), data.list("test").string()}}});
      out << "train " << parts[0].size() << "  dev " << parts[1].size() << "  test "
          << parts[2].size() << "  -> " << resplit_out << '\n';
      return kOk;
    }

    if (stats_cmd->parsed()) {
      const auto train_set = data.load("train");
      std::vector<Dialogue> held_out;
      nlohmann::json j;
      j["dialogues"]["train"] = train_set.size();
      for (const char* s : {"dev", "test"}) {
        if (!data.has_list(s)) continue;
        auto part = data.load(s);
        j["dialogues"][s] = part.size();
        const auto h = triple_frequency(train_set, part);
        j["unseen_triples"][s] = {{"distinct", h.unseen_distinct}, {"turns", h.unseen_turns}};
        for (auto& d : part) held_out.push_back(std::move(d));
      }
      const auto lengths = history_lengths(train_set);
      j["history_length"] = {{"max", percentile(lengths, 100.0)}, {"p95", percentile(lengths, 95.0)}};
      const auto hist = triple_frequency(train_set, held_out);
      nlohmann::json entries = nlohmann::json::array();
      for (const auto& e : hist.entries) entries.push_back({{"triple", e.triple.values}, {"count", e.count}});
      j["triple_histogram"] = entries;

      out << "dialogues: train " << train_set.size();
      for (const char* s : {"dev", "test"})
        if (j["dialogues"].contains(s)) out << "  " << s << ' ' << j["dialogues"][s].get<std::size_t>();
      out << "\nhistory length (tokens): max " << j["history_length"]["max"].get<std::size_t>()
          << "  p95 " << j["history_length"]["p95"].get<std::size_t>() << '\n';
      if (j.contains("unseen_triples"))
        for (const auto& [s, v] : j["unseen_triples"].items())
          out << "triples in " << s << " unseen in train: " << v["distinct"].get<std::size_t>()
              << " distinct, " << v["turns"].get<std::size_t>() << " turns\n";
      out << "triple histogram (" << hist.entries.size() << " distinct, ascending):\n";
      for (const auto& e : hist.entries)
        out << std::setw(7) << e.count << "  " << e.triple.food() << " | " << e.triple.area()
            << " | " << e.triple.pricerange() << '\n';
      if (!stats_out.empty()) write_json(stats_out, j);
      return kOk;
    }

    if (track_cmd->parsed()) {
      const auto ck = load_checkpoint(track_ckpt);
      const auto db = Database::load(track_db);
      if (transcript.empty()) {
        run_track(*ck.model, db, in, out);
      } else {
        std::ifstream tf(transcript);
        if (!tf) throw LoadError("cannot open transcript " + transcript);
        run_track(*ck.model, db, tf, out);
      }
      return kOk;
    }

    if (synth_cmd->parsed()) {
      write_corpus(micro_corpus(synth_n, synth_seed), synth_out);
      out << "wrote " << synth_n << " synthetic dialogues to " << synth_out << '\n';
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const LoadError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const VersionError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const ChecksumError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsage;
}

}  // namespace dst::cli
