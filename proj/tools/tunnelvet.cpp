// tunnelvet command line: serve the validating forwarder or splitter,
// classify name lists offline, manage the tunnel registry, generate
// synthetic corpora and score detection quality.

#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tunnelvet/classifier.hpp"
#include "tunnelvet/config.hpp"
#include "tunnelvet/registry.hpp"
#include "tunnelvet/resolver.hpp"
#include "tunnelvet/traffic_lab.hpp"

namespace {

using namespace tunnelvet;

volatile std::sig_atomic_t g_stop = 0;
volatile std::sig_atomic_t g_reset = 0;

void on_signal(int sig) {
  if (sig == SIGHUP)
    g_reset = 1;
  else
    g_stop = 1;
}

std::int64_t unix_now() { return static_cast<std::int64_t>(std::time(nullptr)); }

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;

  config::ServiceConfig resolve() const {
    config::ServiceConfig cfg = config_path.empty()
                                    ? config::default_config()
                                    : config::load_config(config_path);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw config::ConfigError("--set expects key=value, got '" + kv + "'");
      config::apply_setting(cfg, config::detail::trim(kv.substr(0, eq)),
                            kv.substr(eq + 1));
    }
    return cfg;
  }
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_path, "Configuration file");
  cmd->add_option("--set", args.overrides,
                  "Override any config key (key=value, repeatable)");
}

features::Dictionary load_dictionary(const config::ServiceConfig& cfg) {
  if (cfg.dictionary_file.empty()) {
    std::cerr << "warning: no dictionary_file configured; "
                 "meaningful-substring scores will be zero\n";
    return {};
  }
  return features::Dictionary::load(cfg.dictionary_file);
}

registry::Registry load_registry(const config::ServiceConfig& cfg) {
  registry::Registry reg;
  if (!cfg.registry_file.empty() &&
      std::filesystem::exists(cfg.registry_file))
    reg = registry::Registry::load(cfg.registry_file);
  if (!cfg.blacklist_file.empty() &&
      std::filesystem::exists(cfg.blacklist_file)) {
    auto added = reg.import_blacklist(cfg.blacklist_file, unix_now());
    std::cerr << "imported " << added << " blacklist suffixes from "
              << cfg.blacklist_file << "\n";
  }
  return reg;
}

int cmd_serve(const ConfigArgs& args) {
  auto cfg = args.resolve();
  cfg.validate();
  resolver::Server server(cfg, load_dictionary(cfg), load_registry(cfg));
  server.start();
  std::cerr << "tunnelvet listening on " << server.endpoint().to_string()
            << " (" << (cfg.mode == config::Mode::Validator ? "validator"
                                                            : "splitter")
            << " mode)\n";

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGHUP, on_signal);
  while (!g_stop) {
    if (g_reset) {
      server.reset_stats();
      std::cerr << "uniformity statistics reset\n";
      g_reset = 0;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  std::cerr << "shutting down\n";
  server.stop();
  return 0;
}

int cmd_classify(const ConfigArgs& args, const std::string& input,
                 const std::string& output, bool promote) {
  auto cfg = args.resolve();
  auto dict = load_dictionary(cfg);
  auto reg = load_registry(cfg);
  classifier::Classifier clf(cfg.classifier, std::move(dict));
  uniformity::UniformityTracker no_zones;

  std::ofstream file;
  if (!output.empty()) {
    file.open(output, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + output);
  }
  std::ostream& out = output.empty() ? std::cout : file;

  std::size_t promoted = 0;
  for (const auto& text : traffic_lab::load_names(input)) {
    auto qname = dns::parse_name(text);
    auto verdict = clf.classify(qname, reg, no_zones, false);
    nlohmann::json j;
    j["qname"] = text;
    j["decision"] = std::string(classifier::to_string(verdict.decision));
    j["reason"] = std::string(classifier::to_string(verdict.reason));
    if (verdict.score)
      j["score"] = *verdict.score;
    else
      j["score"] = nullptr;
    out << j.dump() << '\n';
    if (promote && verdict.decision == classifier::Decision::Insecure &&
        verdict.reason == classifier::Reason::ScoreAboveThreshold) {
      reg.blacklist_add(qname, registry::Provenance::Detected, unix_now());
      ++promoted;
    }
  }
  if (promote) {
    if (cfg.registry_file.empty())
      throw config::ConfigError(
          "--promote-detections needs registry_file in the config");
    reg.save(cfg.registry_file);
    std::cerr << "promoted " << promoted << " detections to the blacklist\n";
  }
  return 0;
}

registry::Registry open_registry(const std::string& path) {
  if (std::filesystem::exists(path)) return registry::Registry::load(path);
  return {};
}

int cmd_registry_add(const std::string& path, const std::string& domain,
                     const std::string& alphabet, int max_label, int max_total,
                     int labels_min, int labels_max,
                     const std::string& registrant) {
  auto reg = open_registry(path);
  registry::TunnelPattern pattern;
  registry::detail::alphabet_from_string(pattern, alphabet);
  pattern.max_label_length = max_label;
  pattern.max_total_length = max_total;
  pattern.label_count_min = labels_min;
  pattern.label_count_max = labels_max;
  auto entry = reg.register_domain(dns::parse_name(domain), pattern, registrant,
                                   unix_now());
  reg.save(path);
  std::cout << "registered " << entry.domain.to_text() << " ("
            << registry::detail::alphabet_to_string(entry.pattern) << ")\n";
  return 0;
}

int cmd_registry_invalidate(const std::string& path, const std::string& domain) {
  auto reg = open_registry(path);
  reg.invalidate(dns::parse_name(domain), unix_now());
  reg.save(path);
  std::cout << "invalidated " << domain << " and blacklisted it\n";
  return 0;
}

int cmd_registry_list(const std::string& path) {
  auto reg = open_registry(path);
  for (const auto& e : reg.entries())
    std::cout << "entry " << e.domain.to_text() << " status="
              << (e.status == registry::EntryStatus::Active ? "active"
                                                            : "invalidated")
              << " alphabet=" << registry::detail::alphabet_to_string(e.pattern)
              << " labels=" << e.pattern.label_count_min << ".."
              << e.pattern.label_count_max
              << " max_label=" << e.pattern.max_label_length
              << " max_total=" << e.pattern.max_total_length << " registrant=\""
              << e.registrant << "\"\n";
  for (const auto& b : reg.blacklist())
    std::cout << "blacklist " << b.domain.to_text() << " provenance="
              << registry::detail::provenance_to_string(b.provenance) << "\n";
  return 0;
}

int cmd_registry_import(const std::string& path, const std::string& file) {
  auto reg = open_registry(path);
  auto added = reg.import_blacklist(file, unix_now());
  reg.save(path);
  std::cout << "imported " << added << " new blacklist suffixes\n";
  return 0;
}

int cmd_gen(traffic_lab::CorpusSpec spec, const std::string& dictionary,
            const std::string& out, const std::string& labels_out) {
  std::vector<std::string> names;
  if (spec.kind == traffic_lab::CorpusSpec::Kind::Benign) {
    auto dict = features::Dictionary::load(dictionary);
    names = traffic_lab::gen_benign(spec, dict);
  } else {
    names = traffic_lab::gen_tunnel(spec);
  }
  if (out.empty()) {
    for (const auto& n : names) std::cout << n << '\n';
  } else {
    traffic_lab::write_names(out, names);
    std::cerr << "wrote " << names.size() << " names to " << out << "\n";
  }
  if (!labels_out.empty()) {
    std::vector<traffic_lab::LabeledName> labeled;
    bool tunnel = spec.kind == traffic_lab::CorpusSpec::Kind::Tunnel;
    for (const auto& n : names) labeled.push_back({n, tunnel});
    std::ofstream file(labels_out, std::ios::app);
    if (!file) throw std::runtime_error("cannot write " + labels_out);
    for (const auto& item : labeled)
      file << item.name << '\t' << (item.tunnel ? "tunnel" : "benign") << '\n';
    std::cerr << "appended " << labeled.size() << " labels to " << labels_out
              << "\n";
  }
  return 0;
}

int cmd_eval(const ConfigArgs& args, const std::string& corpus,
             const std::string& labels, const std::string& report_path,
             const std::string& roc_path) {
  auto cfg = args.resolve();
  auto dict = load_dictionary(cfg);
  auto labeled = traffic_lab::load_labeled(corpus, labels);
  auto report = traffic_lab::evaluate(labeled, cfg.classifier, dict);

  std::cout << "samples: " << report.scored.size() << "\n"
            << "auc: " << report.auc << "\n"
            << "tpr_at_fpr_0.05: " << report.tpr_at_fpr(0.05) << "\n"
            << "threshold: " << report.threshold << "\n"
            << "confusion: tp=" << report.confusion.tp
            << " fp=" << report.confusion.fp << " tn=" << report.confusion.tn
            << " fn=" << report.confusion.fn << "\n"
            << "runtime_seconds: " << report.runtime_seconds << "\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + report_path);
    out << report.to_json().dump(2) << '\n';
  }
  if (!roc_path.empty()) {
    std::ofstream out(roc_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + roc_path);
    report.write_roc_csv(out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tunnel-vetting DNS forwarder and traffic lab"};
  app.require_subcommand(1);

  // serve
  ConfigArgs serve_args;
  std::string serve_mode, serve_listen, serve_policy, serve_log;
  auto* serve = app.add_subcommand("serve", "Run the DNS service");
  add_config_options(serve, serve_args);
  serve->add_option("--mode", serve_mode, "validator or splitter");
  serve->add_option("--listen", serve_listen, "Listen address (ip:port)");
  serve->add_option("--policy", serve_policy, "nxdomain, servfail or drop");
  serve->add_option("--log", serve_log, "Query log file (JSON lines)");

  // classify
  ConfigArgs classify_args;
  std::string classify_input, classify_output;
  bool promote = false;
  auto* classify = app.add_subcommand("classify", "Classify a name list");
  add_config_options(classify, classify_args);
  classify->add_option("--input", classify_input, "Name list, one per line")
      ->required();
  classify->add_option("--output", classify_output,
                       "Verdicts file (default stdout)");
  classify->add_flag("--promote-detections", promote,
                     "Blacklist score-detected names in the registry file");

  // registry
  auto* reg_cmd = app.add_subcommand("registry", "Manage the tunnel registry");
  reg_cmd->require_subcommand(1);
  std::string reg_path;
  reg_cmd->add_option("--registry", reg_path, "Registry file (JSON lines)")
      ->required();

  std::string add_domain, add_alphabet = "base32", add_registrant;
  int add_max_label = 63, add_max_total = 255, add_min = 1, add_max = 4;
  auto* reg_add = reg_cmd->add_subcommand("add", "Register a tunnel domain");
  reg_add->add_option("--domain", add_domain)->required();
  reg_add->add_option("--alphabet", add_alphabet,
                      "base32|base64url|hex|alphanumeric|custom:<chars>");
  reg_add->add_option("--max-label-length", add_max_label);
  reg_add->add_option("--max-total-length", add_max_total);
  reg_add->add_option("--labels-min", add_min);
  reg_add->add_option("--labels-max", add_max);
  reg_add->add_option("--registrant", add_registrant);

  std::string invalidate_domain;
  auto* reg_inv = reg_cmd->add_subcommand(
      "invalidate", "Invalidate an entry and blacklist the domain");
  reg_inv->add_option("--domain", invalidate_domain)->required();

  auto* reg_list = reg_cmd->add_subcommand("list", "Print registry contents");

  std::string import_file;
  auto* reg_imp = reg_cmd->add_subcommand("import-blacklist",
                                          "Bulk-import blacklist domains");
  reg_imp->add_option("--file", import_file)->required();

  // gen
  auto* gen = app.add_subcommand("gen", "Generate synthetic corpora");
  gen->require_subcommand(1);
  traffic_lab::CorpusSpec gen_spec;
  std::string gen_dictionary, gen_out, gen_labels_out, gen_encoding = "base32";

  auto* gen_benign = gen->add_subcommand("benign", "Dictionary-word names");
  gen_benign->add_option("--count", gen_spec.count)->required();
  gen_benign->add_option("--seed", gen_spec.seed);
  gen_benign->add_option("--dictionary", gen_dictionary)->required();
  gen_benign->add_option("--labels-min", gen_spec.label_count_min);
  gen_benign->add_option("--labels-max", gen_spec.label_count_max);
  gen_benign->add_option("--out", gen_out);
  gen_benign->add_option("--labels-out", gen_labels_out);

  auto* gen_tunnel = gen->add_subcommand("tunnel", "Encoded payload names");
  gen_tunnel->add_option("--count", gen_spec.count)->required();
  gen_tunnel->add_option("--seed", gen_spec.seed);
  gen_tunnel->add_option("--suffix", gen_spec.suffix);
  gen_tunnel->add_option("--encoding", gen_encoding, "base32|base64url|hex");
  gen_tunnel->add_option("--payload-min", gen_spec.payload_min);
  gen_tunnel->add_option("--payload-max", gen_spec.payload_max);
  gen_tunnel->add_option("--max-labels", gen_spec.max_payload_labels);
  gen_tunnel->add_option("--out", gen_out);
  gen_tunnel->add_option("--labels-out", gen_labels_out);

  // eval
  ConfigArgs eval_args;
  std::string eval_corpus, eval_labels, eval_report, eval_roc;
  auto* eval = app.add_subcommand("eval", "Score detection quality");
  add_config_options(eval, eval_args);
  eval->add_option("--corpus", eval_corpus, "Names, one per line")->required();
  eval->add_option("--labels", eval_labels, "name<TAB>benign|tunnel lines")
      ->required();
  eval->add_option("--report", eval_report, "Write the JSON report here");
  eval->add_option("--roc", eval_roc, "Write the ROC table as CSV here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) {
      if (!serve_mode.empty()) serve_args.overrides.push_back("mode=" + serve_mode);
      if (!serve_listen.empty())
        serve_args.overrides.push_back("listen=" + serve_listen);
      if (!serve_policy.empty())
        serve_args.overrides.push_back("policy=" + serve_policy);
      if (!serve_log.empty()) serve_args.overrides.push_back("log_file=" + serve_log);
      return cmd_serve(serve_args);
    }
    if (*classify)
      return cmd_classify(classify_args, classify_input, classify_output,
                          promote);
    if (*reg_add)
      return cmd_registry_add(reg_path, add_domain, add_alphabet, add_max_label,
                              add_max_total, add_min, add_max, add_registrant);
    if (*reg_inv) return cmd_registry_invalidate(reg_path, invalidate_domain);
    if (*reg_list) return cmd_registry_list(reg_path);
    if (*reg_imp) return cmd_registry_import(reg_path, import_file);
    if (*gen_benign) {
      gen_spec.kind = traffic_lab::CorpusSpec::Kind::Benign;
      return cmd_gen(gen_spec, gen_dictionary, gen_out, gen_labels_out);
    }
    if (*gen_tunnel) {
      gen_spec.kind = traffic_lab::CorpusSpec::Kind::Tunnel;
      gen_spec.encoding = traffic_lab::encoding_from_string(gen_encoding);
      return cmd_gen(gen_spec, gen_dictionary, gen_out, gen_labels_out);
    }
    if (*eval)
      return cmd_eval(eval_args, eval_corpus, eval_labels, eval_report,
                      eval_roc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
