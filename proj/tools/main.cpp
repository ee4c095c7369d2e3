// cenet: synthetic darkening, training, evaluation, enhancement and metrics
// export for the parallel relighting + ReID network.

#include "cenet/archive.hpp"
#include "cenet/config.hpp"
#include "cenet/datasets.hpp"
#include "cenet/errors.hpp"
#include "cenet/eval.hpp"
#include "cenet/image_io.hpp"
#include "cenet/metrics.hpp"
#include "cenet/training.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

namespace fs = std::filesystem;
using namespace cenet;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flags with a short spelling; every other config leaf is exposed as --<dotted.key>.
const std::map<std::string, std::string> kAliases = {
    {"io.src", "src"},     {"io.out", "out"},       {"io.ckpt", "ckpt"},   {"io.query", "query"},
    {"io.gallery", "gallery"}, {"io.input", "in"},  {"io.real", "real"},   {"io.syn", "syn"},
    {"io.init", "init"},   {"io.resume", "resume"}, {"io.camid", "camid"}, {"io.domain", "domain"},
    {"io.formats", "format"}, {"seed", "seed"},     {"ablation", "ablation"}};

struct Command {
  CLI::App* app = nullptr;
  std::string preset = "full";
  std::string config_file;
  std::map<std::string, std::string> values;  // config key -> raw flag value
};

void add_config_flags(Command& cmd) {
  cmd.app->add_option("--preset", cmd.preset, "Base configuration (toy|full)")->capture_default_str();
  cmd.app->add_option("--config", cmd.config_file, "JSON configuration file applied over the preset");
  const Json defaults = to_json(AppConfig::full());
  for (const std::string& key : leaf_keys(defaults)) {
    const auto alias = kAliases.find(key);
    const std::string flag = "--" + (alias != kAliases.end() ? alias->second : key);
    std::string help = "config key " + key;
    const std::string def = leaf_to_flag(get_dotted(defaults, key));
    auto* opt = cmd.app->add_option_function<std::string>(
        flag, [&cmd, key](const std::string& v) { cmd.values[key] = v; }, help);
    if (!def.empty()) opt->default_str(def);
    opt->type_name(get_dotted(defaults, key).is_array() ? "LIST" : "VALUE");
  }
}

AppConfig resolve(const Command& cmd) {
  AppConfig cfg = AppConfig::preset(cmd.preset);
  if (!cmd.config_file.empty()) cfg = load_config_file(resolve_path(cmd.config_file), cfg);
  Json doc = to_json(cfg);
  for (const auto& [key, value] : cmd.values) set_dotted(doc, key, value);
  AppConfig out = AppConfig::preset(cmd.preset);
  apply_json(out, doc);
  if (!out.ablation.empty()) {
    Ablation a;
    try {
      a = parse_ablation(out.ablation);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    apply_ablation(a, out.model, out.train, out.loss);
  }
  return out;
}

std::uint64_t require_seed(const AppConfig& cfg, const char* command) {
  if (!cfg.seed) throw UsageError(std::string(command) + ": --seed is required");
  return *cfg.seed;
}

fs::path require_path(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("--") + flag + " is required");
  return resolve_path(value);
}

std::string stamp(double seconds) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1fs", seconds);
  return buf;
}

DatasetSplit load_role(const fs::path& manifest, Role role) {
  DatasetSplit s = load_manifest(manifest, role);
  if (s.size() == 0)
    throw ValidationError(manifest.string() + ": no records with role " + role_name(role));
  return s;
}

EvalReport run_eval(const CENet<float>& model, const DatasetSplit& query, const DatasetSplit& gallery,
                    const AppConfig& cfg) {
  check_disjoint(query, gallery);
  AugmentConfig aug = cfg.augment;
  aug.height = model.config().image_height;
  aug.width = model.config().image_width;
  ImageCache cache;
  FeatureSet q = extract_features(model, query, aug, cfg.eval.batch_size, &cache);
  FeatureSet g = extract_features(model, gallery, aug, cfg.eval.batch_size, &cache);
  return evaluate(pairwise_distance(q.features, g.features), q.meta, g.meta,
                  EvalOptions{cfg.eval.exclude_same_camera});
}

// synth -----------------------------------------------------------------------

int cmd_synth(const AppConfig& cfg_in) {
  AppConfig cfg = cfg_in;
  cfg.degradation.seed = require_seed(cfg, "synth");
  const fs::path src = require_path(cfg.io.src, "src");
  const fs::path out = require_path(cfg.io.out, "out");
  DatasetSplit source = load_manifest(src);
  SynthesisResult r = synthesize_dark(source, cfg.degradation, out);
  write_manifest(r.split, out / "manifest.txt");
  write_degradation_report(r.report, out / "degradation.jsonl");
  std::cout << "synth: " << r.split.size() << "/" << source.size() << " images darkened into " << out.string()
            << "\n";
  for (const auto& e : r.errors) std::cerr << "error: io: " << e << "\n";
  return r.errors.empty() ? 0 : 4;
}

// train -----------------------------------------------------------------------

int cmd_train(const AppConfig& cfg_in) {
  AppConfig cfg = cfg_in;
  const std::uint64_t seed = require_seed(cfg, "train");
  const fs::path out = require_path(cfg.io.out, "out");
  std::optional<DatasetSplit> real, syn;
  if (!cfg.io.real.empty()) real = load_role(resolve_path(cfg.io.real), Role::train).only(Domain::real);
  if (!cfg.io.syn.empty()) syn = load_role(resolve_path(cfg.io.syn), Role::train).only(Domain::synthetic);
  for (Domain d : cfg.train.pattern) {
    const auto& s = d == Domain::real ? real : syn;
    if (!s || s->size() == 0)
      throw UsageError(std::string("train: pattern uses the ") + domain_name(d) + " domain but --" +
                       (d == Domain::real ? "real" : "syn") + " has no such training records");
  }
  for (Domain d : {Domain::real, Domain::synthetic}) {
    const auto& s = d == Domain::real ? real : syn;
    const std::size_t i = static_cast<std::size_t>(d);
    cfg.model.num_classes[i] = s ? static_cast<Index>(s->num_identities(d)) : 0;
    if (s) cfg.model.num_cameras[i] = std::max<Index>(cfg.model.num_cameras[i], s->num_cameras(d));
  }
  cfg.augment.height = cfg.model.image_height;
  cfg.augment.width = cfg.model.image_width;
  cfg.validate();

  std::optional<DatasetSplit> query, gallery;
  if (!cfg.io.query.empty() || !cfg.io.gallery.empty()) {
    query = load_role(require_path(cfg.io.query, "query"), Role::query);
    gallery = load_role(require_path(cfg.io.gallery, "gallery"), Role::gallery);
  }

  fs::create_directories(out);
  {
    std::ofstream f(out / "config.json");
    f << to_json(cfg).dump(2) << "\n";
  }

  auto make_state = [&]() {
    if (!cfg.io.resume.empty()) {
      TrainState<float> s = load_checkpoint<float>(resolve_path(cfg.io.resume), cfg.train);
      if (model_to_json(s.model->config()) != model_to_json(cfg.model))
        throw IncompatibleError("train: --resume checkpoint was written for a different model configuration");
      return s;
    }
    TrainState<float> s(cfg.model, cfg.train, seed);
    if (!cfg.io.init.empty()) {
      ImportReport rep = import_weights(*s.model, read_archive(resolve_path(cfg.io.init)));
      std::cout << "init: " << rep.loaded.size() << " tensors imported, " << rep.missing.size()
                << " left at random initialisation, " << rep.ignored.size() << " ignored\n";
    }
    return s;
  };
  TrainState<float> state = make_state();

  const bool resuming = !cfg.io.resume.empty();
  std::ofstream metrics(out / "metrics.jsonl", resuming ? std::ios::app : std::ios::trunc);
  std::ofstream eval_log(out / "eval.jsonl", resuming ? std::ios::app : std::ios::trunc);
  if (!metrics || !eval_log) throw IoError("train: cannot write logs under " + out.string());

  const Json extra = {{"config", to_json(cfg)}};
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  const long total = cfg.train.total_steps();

  auto do_eval = [&](TrainState<float>& s) {
    if (!query) return;
    s.model->set_training(false);
    EvalReport r = run_eval(*s.model, *query, *gallery, cfg);
    s.model->set_training(true);
    Json j = {{"step", s.step}, {"mAP", r.mAP}, {"rank1", r.rank(1)}, {"rank5", r.rank(5)}, {"rank10", r.rank(10)}};
    eval_log << j.dump() << "\n" << std::flush;
    std::cout << "eval step " << s.step << ": " << format_summary(r) << "\n";
    if (r.mAP > s.best_metric) {
      s.best_metric = r.mAP;
      s.best_step = s.step;
      save_checkpoint(s, out / "best.ckpt", extra);
    }
  };

  LoopHooks<float> hooks;
  hooks.on_step = [&](const StepRecord& rec) {
    metrics << metrics_record(rec) << "\n" << std::flush;
    std::printf("step %ld/%ld %-9s total %.4f  id %.4f  tri %.4f  ie %.4f  ld %.4f  lr %.5f  %s\n", rec.step, total,
                domain_name(rec.bundle.domain), rec.bundle.total(), rec.bundle.at("L_ID"), rec.bundle.at("L_Tri"),
                rec.bundle.at("L_IE"), rec.bundle.at("L_LD"), rec.lr, stamp(elapsed()).c_str());
    std::fflush(stdout);
  };
  hooks.on_checkpoint = [&](TrainState<float>& s) { save_checkpoint(s, out / "checkpoint.ckpt", extra); };
  hooks.on_eval = do_eval;

  TrainData data{real ? &*real : nullptr, syn ? &*syn : nullptr};
  alternating_loop(state, data, cfg.train, cfg.loss, cfg.augment, hooks);
  if (state.step == total && (cfg.train.eval_every <= 0 || total % cfg.train.eval_every != 0)) do_eval(state);
  save_checkpoint(state, out / "checkpoint.ckpt", extra);
  std::cout << "train: " << state.step << " steps, checkpoint " << (out / "checkpoint.ckpt").string() << "\n";
  return 0;
}

// eval ------------------------------------------------------------------------

int cmd_eval(const AppConfig& cfg) {
  auto model = load_model<float>(require_path(cfg.io.ckpt, "ckpt"));
  if (!model->has_group(ParamGroup::shared) || !model->has_group(ParamGroup::reid))
    throw ValidationError("eval: checkpoint lacks the shared encoder or ReID subnet");
  DatasetSplit query = load_role(require_path(cfg.io.query, "query"), Role::query);
  DatasetSplit gallery = load_role(require_path(cfg.io.gallery, "gallery"), Role::gallery);
  EvalReport r = run_eval(*model, query, gallery, cfg);
  std::cout << format_summary(r) << "\n";
  std::set<ReportFormat> formats;
  for (const auto& f : cfg.io.formats) formats.insert(f == "csv" ? ReportFormat::csv : ReportFormat::text);
  const fs::path stem = cfg.io.out.empty() ? resolve_path("eval_report") : resolve_path(cfg.io.out);
  for (const auto& p : emit_report(r, stem, formats)) std::cout << "wrote " << p.string() << "\n";
  return 0;
}

// enhance ---------------------------------------------------------------------

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

int cmd_enhance(const AppConfig& cfg) {
  auto model = load_model<float>(require_path(cfg.io.ckpt, "ckpt"));
  if (!model->has_group(ParamGroup::shared) || !model->has_group(ParamGroup::relight))
    throw ValidationError("enhance: checkpoint lacks the shared encoder or relighting subnet");
  const fs::path in = require_path(cfg.io.input, "in");
  const fs::path out = require_path(cfg.io.out, "out");
  Domain domain;
  try {
    domain = parse_domain(cfg.io.domain);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(in)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(in))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) jobs.emplace_back(f, out / (f.stem().string() + ".png"));
    if (jobs.empty()) throw IoError("enhance: no images in " + in.string());
  } else {
    jobs.emplace_back(in, out);
  }
  const ModelConfig& mc = model->config();
  for (const auto& [src, dst] : jobs) {
    Image img = load_image(src);
    Tensor<float> batch = as_batch(resize(img, mc.image_height, mc.image_width));
    RelightOutput<float> r = model->enhance(batch, {cfg.io.camid}, domain);
    Image R = r.reflectance.value().reshaped({3, mc.image_height, mc.image_width});
    save_image(dst, resize(R, height_of(img), width_of(img)));
    std::cout << "wrote " << dst.string() << "\n";
  }
  return 0;
}

// report ----------------------------------------------------------------------

int cmd_report(const AppConfig& cfg) {
  const fs::path in = require_path(cfg.io.input, "in");
  const fs::path stem = cfg.io.out.empty() ? in.parent_path() / in.stem() : resolve_path(cfg.io.out);
  auto rows = read_metrics_log(in);
  write_metrics_csv(rows, stem.string() + ".csv");
  write_metrics_svg(rows, stem.string() + ".svg");
  std::cout << "report: " << rows.size() << " records -> " << stem.string() << ".csv, " << stem.string() << ".svg\n";
  return 0;
}

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << "error: " << kind << ": " << message << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CENet parallel relighting + person re-identification"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const AppConfig&);
  };
  const Entry entries[] = {
      {"synth", "Darken a daytime manifest into a paired synthetic-domain dataset", cmd_synth},
      {"train", "Train with the multi-domain alternating schedule", cmd_train},
      {"eval", "Extract ReID features and report mAP / CMC", cmd_eval},
      {"enhance", "Write the reflectance (relit) image for inputs", cmd_enhance},
      {"report", "Convert a metrics log to CSV and SVG curves", cmd_report},
  };
  std::vector<std::unique_ptr<Command>> commands;
  for (const auto& e : entries) {
    auto cmd = std::make_unique<Command>();
    cmd->app = app.add_subcommand(e.name, e.help);
    add_config_flags(*cmd);
    commands.push_back(std::move(cmd));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!commands[i]->app->parsed()) continue;
    try {
      AppConfig cfg = resolve(*commands[i]);
      return entries[i].run(cfg);
    } catch (const UsageError& e) {
      return fail("usage", e.what(), 2);
    } catch (const ConfigError& e) {
      return fail("config", e.what(), 2);
    } catch (const ParseError& e) {
      return fail("parse", e.what(), 3);
    } catch (const ValidationError& e) {
      return fail("validation", e.what(), 3);
    } catch (const IoError& e) {
      return fail("io", e.what(), 4);
    } catch (const IntegrityError& e) {
      return fail("integrity", e.what(), 5);
    } catch (const IncompatibleError& e) {
      return fail("incompatible", e.what(), 5);
    } catch (const std::invalid_argument& e) {
      return fail("invalid argument", e.what(), 3);
    } catch (const std::exception& e) {
      return fail("internal", e.what(), 1);
    }
  }
  return 1;
}
