#include "cli.hpp"

#include <map>
#include <ostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wig/pipeline.hpp"

namespace wig::cli {

namespace {

struct Invocation {
  std::string config_path;
  std::map<std::string, std::string> flags;
  std::string flavor = "wig";
  bool print_manifest = false;
};

CLI::App* add_stage(CLI::App& app, Invocation& inv, const std::string& name, const std::string& help, bool flavored) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("-c,--config", inv.config_path, "flat key = value config file");
  sub->add_flag("--manifest", inv.print_manifest, "print the resolved config and exit");
  if (flavored) sub->add_option("--flavor", inv.flavor, "wig or pwig")->check(CLI::IsMember({"wig", "pwig"}));
  for (const auto& key : config_keys()) {
    const std::string k = key.name;
    sub->add_option_function<std::string>("--" + k, [&inv, k](const std::string& v) { inv.flags[k] = v; }, key.help);
  }
  return sub;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Wasserstein index generation pipeline"};
  app.require_subcommand(1);
  Invocation inv;
  add_stage(app, inv, "ingest", "read raw documents, build corpus and vocabulary", false);
  add_stage(app, inv, "embed", "load or train embeddings and build the cost matrix", false);
  add_stage(app, inv, "prune", "cluster embeddings and remap tokens onto a base vocabulary", false);
  add_stage(app, inv, "train", "fit the topic dictionary", true);
  add_stage(app, inv, "index", "reduce topics to scores and aggregate a monthly index", true);
  add_stage(app, inv, "eval", "correlate the index with a reference series", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    const auto file = inv.config_path.empty() ? std::map<std::string, std::string>{} : read_config_file(inv.config_path);
    const RunConfig cfg = resolve_config(file, inv.flags);
    validate(cfg);
    if (inv.print_manifest) {
      nlohmann::ordered_json m;
      m["stage"] = stage;
      if (stage == "train" || stage == "index" || stage == "eval") m["flavor"] = inv.flavor;
      m["config"] = nlohmann::json::parse(config_json(cfg));
      out << m.dump(2) << "\n";
      return 0;
    }
    const Flavor flavor = parse_flavor(inv.flavor);
    StageOutcome outcome;
    if (stage == "ingest") outcome = cmd_ingest(cfg);
    else if (stage == "embed") outcome = cmd_embed(cfg);
    else if (stage == "prune") outcome = cmd_prune(cfg);
    else if (stage == "train") outcome = cmd_train(cfg, flavor);
    else if (stage == "index") outcome = cmd_index(cfg, flavor);
    else outcome = cmd_eval(cfg, flavor);
    out << stage << ": wrote " << outcome.manifest.string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << "wig " << stage << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace wig::cli
