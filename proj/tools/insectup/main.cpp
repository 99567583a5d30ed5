// insectup: operator CLI for the observation platform.

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <pthread.h>
#include <sstream>
#include <thread>

#include "insectup/evaluation.hpp"
#include "insectup/service/backends.hpp"
#include "insectup/service/codec.hpp"
#include "insectup/service/digest.hpp"
#include "insectup/service/http_api.hpp"
#include "insectup/service/platform.hpp"

namespace {

using namespace insectup;
using namespace insectup::service;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kIo = 2;

struct Globals {
  std::string config;
  std::string store;
  bool verbose = false;
};

Config load_config(const Globals& g) {
  std::optional<std::filesystem::path> file;
  if (!g.config.empty()) file = g.config;
  auto c = Config::load(file);
  if (!g.store.empty()) c.storage_root = g.store;
  return c;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::StorageFailure:
    case ErrorCode::StoreLocked:
    case ErrorCode::BackendUnavailable:
      return kIo;
    default:
      return kValidation;
  }
}

void write_output(const std::string& path, const std::string& data) {
  if (path.empty() || path == "-") {
    std::cout << data << std::flush;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << data;
  if (!out) throw Error(ErrorCode::StorageFailure, "cannot write " + path);
}

int cmd_serve(const Globals& g, std::string listen, const std::string& port_file) {
  auto cfg = load_config(g);
  if (listen.empty()) listen = cfg.listen;
  auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidConfig, "listen must be host:port");
  auto host = listen.substr(0, colon);
  int port = std::stoi(listen.substr(colon + 1));

  // Block termination signals before any thread starts; one thread waits on them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Platform platform(cfg);
  ApiServer api(platform);
  int bound = api.bind(host, port);
  if (bound < 0) throw Error(ErrorCode::StorageFailure, "cannot listen on " + listen);
  std::cout << "listening on http://" << host << ":" << bound << std::endl;
  if (!port_file.empty()) write_file_atomic(port_file, std::to_string(bound));

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    api.stop();
  });
  api.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kOk;
}

int cmd_import_taxonomy(const Globals& g, const std::string& path) {
  auto cfg = load_config(g);
  auto text = read_file(path);
  Platform platform(cfg);
  try {
    auto r = platform.import_taxonomy(text);
    std::cout << "imported taxonomy version " << r.version << ": " << r.nodes - 1 << " taxa, " << r.species
              << " species\n";
  } catch (const TaxonomyError& e) {
    std::cerr << path << ": " << e.violations().size() << " violation(s)\n";
    for (const auto& v : e.violations()) {
      std::cerr << "  row " << v.line << ": " << to_string(v.code) << ": " << v.message << "\n";
    }
    return kValidation;
  }
  return kOk;
}

int cmd_import_dataset(const Globals& g, const std::string& manifest, std::size_t limit,
                       const std::string& report_path) {
  auto cfg = load_config(g);
  auto rows = parse_manifest(read_file(manifest));
  if (limit > 0 && rows.size() > limit) rows.resize(limit);
  Platform platform(cfg);
  auto base = std::filesystem::path(manifest).parent_path();
  auto report = platform.import_dataset(rows, base, [&](std::size_t done, std::size_t total) {
    if (g.verbose && (done % 100 == 0 || done == total)) {
      std::cerr << "progress " << done << "/" << total << "\n";
    }
  });
  for (const auto& i : report.issues) {
    std::cout << "line " << i.line << ": " << i.outcome << " " << i.code << ": " << i.message;
    if (i.matched_observation_id) std::cout << " (matches " << *i.matched_observation_id << ")";
    std::cout << "\n";
  }
  std::cout << "accepted " << report.accepted << ", skipped " << report.skipped << ", failed " << report.failed
            << ", already imported " << report.already_imported << "\n";
  if (report.failed + report.skipped > 0) {
    std::cout << "warnings: " << report.failed + report.skipped << " row(s) not imported\n";
  }
  if (!report_path.empty()) {
    nlohmann::json issues = nlohmann::json::array();
    for (const auto& i : report.issues) {
      issues.push_back({{"line", i.line},
                        {"outcome", i.outcome},
                        {"code", i.code},
                        {"message", i.message},
                        {"matched_observation_id",
                         i.matched_observation_id ? nlohmann::json(*i.matched_observation_id) : nlohmann::json()}});
    }
    nlohmann::json j{{"accepted", report.accepted},
                     {"skipped", report.skipped},
                     {"failed", report.failed},
                     {"already_imported", report.already_imported},
                     {"warnings", report.failed + report.skipped > 0},
                     {"issues", issues}};
    write_output(report_path, j.dump(2) + "\n");
  }
  return kOk;
}

int cmd_evaluate(const Globals& g, const std::string& manifest, std::size_t k, const std::string& taxonomy_path) {
  auto cfg = load_config(g);
  std::shared_ptr<const Taxonomy> t;
  if (!taxonomy_path.empty()) {
    t = std::make_shared<const Taxonomy>(Taxonomy::from_csv(read_file(taxonomy_path)));
  } else {
    Platform store(cfg, OpenMode::ReadOnly);
    t = store.taxonomy();
    if (!t) throw Error(ErrorCode::InvalidConfig, "store has no taxonomy; pass --taxonomy");
  }
  auto rows = parse_manifest(read_file(manifest));
  auto base = std::filesystem::path(manifest).parent_path();
  std::vector<LabeledImage> items;
  for (const auto& r : rows) {
    if (r.error) throw Error(ErrorCode::BadRequest, "manifest line " + std::to_string(r.line) + ": " + *r.error);
    std::filesystem::path p(r.image_path);
    if (p.is_relative()) p = base / p;
    auto bytes = read_file(p);
    items.push_back({decode_image(bytes), sha256_hex(bytes), r.species_id});
  }
  auto backend = make_backend(cfg.backend, *t);
  auto report = evaluate(*backend, items, *t, cfg.tau, k);

  std::cout << "items " << report.items << "\n";
  for (std::size_t i = 0; i < report.topk.size(); ++i) {
    std::cout << "top-" << i + 1 << " " << csv::format_number(report.topk[i]) << "\n";
  }
  std::cout << "hierarchical " << csv::format_number(report.hierarchical_accuracy) << "\n";
  std::cout << std::left << std::setw(10) << "rank" << std::setw(8) << "chosen" << std::setw(8) << "correct"
            << "accuracy\n";
  for (auto r : {Rank::Species, Rank::Genus, Rank::Family, Rank::Order, Rank::Root}) {
    const auto& tally = report.at(r);
    std::cout << std::setw(10) << to_string(r) << std::setw(8) << tally.chosen << std::setw(8) << tally.correct
              << (tally.chosen ? csv::format_number(static_cast<double>(tally.correct) / tally.chosen) : "-")
              << "\n";
  }
  return kOk;
}

int cmd_export_demography(const Globals& g, const std::string& taxon, double cell_size, const std::string& out) {
  auto cfg = load_config(g);
  Platform store(cfg, OpenMode::ReadOnly);
  std::optional<std::string> filter;
  if (!taxon.empty()) filter = taxon;
  std::optional<double> size;
  if (cell_size > 0) size = cell_size;
  write_output(out, demography_csv(store.demography(filter, size)));
  return kOk;
}

int cmd_export_novelty(const Globals& g, double cell_size, const std::string& out) {
  auto cfg = load_config(g);
  Platform store(cfg, OpenMode::ReadOnly);
  std::optional<double> size;
  if (cell_size > 0) size = cell_size;
  write_output(out, novelty_csv(store.novelty(size)));
  return kOk;
}

int cmd_user_add(const Globals& g, const std::string& id, bool expert, const std::string& token) {
  auto cfg = load_config(g);
  Platform platform(cfg);
  std::optional<std::string> t;
  if (!token.empty()) t = token;
  auto secret = platform.add_user(id, expert, t);
  std::cout << "user " << id << (expert ? " (expert)" : "") << " token " << secret << "\n";
  return kOk;
}

int cmd_user_list(const Globals& g) {
  auto cfg = load_config(g);
  Platform store(cfg, OpenMode::ReadOnly);
  std::cout << "user_id,is_expert,resolved_count,correct_count,weight\n";
  for (const auto& u : store.users()) {
    std::cout << u.user_id << "," << (u.is_expert ? "true" : "false") << "," << u.history.resolved << ","
              << u.history.correct << "," << csv::format_number(user_reliability(u.history)) << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"insectup: insect observation platform"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Config file (key = value lines)");
  app.add_option("--store", g.store, "Storage root (overrides storage_root)");
  app.add_flag("--verbose", g.verbose, "Progress and diagnostics on stderr");

  std::string listen, port_file;
  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  serve->add_option("--listen", listen, "host:port (port 0 picks a free port)");
  serve->add_option("--port-file", port_file, "Write the bound port here once listening");

  std::string taxonomy_csv;
  auto* import_tax = app.add_subcommand("import-taxonomy", "Load or replace the taxonomy");
  import_tax->add_option("csv", taxonomy_csv, "Taxonomy CSV")->required();

  std::string manifest, report_path;
  std::size_t limit = 0;
  auto* import_ds = app.add_subcommand("import-dataset", "Import a labeled dataset");
  import_ds->add_option("manifest", manifest, "Manifest CSV")->required();
  import_ds->add_option("--limit", limit, "Import at most this many rows");
  import_ds->add_option("--report", report_path, "Write a JSON report here");

  std::string eval_manifest, eval_taxonomy;
  std::size_t k = 5;
  auto* eval = app.add_subcommand("evaluate", "Top-k and hierarchical accuracy of the configured backend");
  eval->add_option("manifest", eval_manifest, "Labeled manifest CSV")->required();
  eval->add_option("-k", k, "Largest k to report")->check(CLI::PositiveNumber);
  eval->add_option("--taxonomy", eval_taxonomy, "Taxonomy CSV (default: the store's)");

  std::string taxon, out;
  double cell_size = 0.0;
  auto* export_demo = app.add_subcommand("export-demography", "Demography report as CSV");
  export_demo->add_option("--taxon", taxon, "Only this taxon (default: every observed taxon)");
  export_demo->add_option("--cell-size", cell_size, "Grid cell size in degrees");
  export_demo->add_option("-o,--output", out, "Output file (default stdout)");

  auto* export_nov = app.add_subcommand("export-novelty", "First occurrences per species and cell as CSV");
  export_nov->add_option("--cell-size", cell_size, "Grid cell size in degrees");
  export_nov->add_option("-o,--output", out, "Output file (default stdout)");

  std::string user_id, token;
  bool expert = false;
  auto* user_add = app.add_subcommand("user-add", "Register a user and print their token");
  user_add->add_option("user_id", user_id, "User id")->required();
  user_add->add_flag("--expert", expert, "May resolve disputes");
  user_add->add_option("--token", token, "Use this token instead of a random one");

  auto* user_list = app.add_subcommand("user-list", "List users and reliability");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    if (*serve) return cmd_serve(g, listen, port_file);
    if (*import_tax) return cmd_import_taxonomy(g, taxonomy_csv);
    if (*import_ds) return cmd_import_dataset(g, manifest, limit, report_path);
    if (*eval) return cmd_evaluate(g, eval_manifest, k, eval_taxonomy);
    if (*export_demo) return cmd_export_demography(g, taxon, cell_size, out);
    if (*export_nov) return cmd_export_novelty(g, cell_size, out);
    if (*user_add) return cmd_user_add(g, user_id, expert, token);
    if (*user_list) return cmd_user_list(g);
  } catch (const TaxonomyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.code_name() << ": " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kValidation;
}
