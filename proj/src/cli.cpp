#include "hpim/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hpim/describer.hpp"
#include "hpim/error.hpp"
#include "hpim/io.hpp"
#include "hpim/moments.hpp"
#include "hpim/sampler.hpp"
#include "hpim/schema.hpp"
#include "hpim/synthworld.hpp"
#include "hpim/triplet.hpp"

namespace hpim::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  std::string schema;
  std::string codes;
  std::string features;
  std::string model;
  std::string out;
  std::string log_file;
  std::string cache_dir;
  std::string world;
  std::string query;
  std::string gallery;

  // moments / plan
  std::size_t order = moments::kDefaultOrder;
  std::optional<std::size_t> k;
  std::size_t p = 4;
  std::size_t s = 4;
  std::string sigma = "auto";
  double sigma_scale = 1.0;
  std::size_t batches = 200;
  std::string anchor_mode = "uniform";
  std::string policy = "hpim";

  // spl-fit
  double rate = 0.1;
  std::size_t epochs = 200;
  std::size_t steps = 5;
  double growth = spl::kDefaultGrowth;
  bool no_spl = false;

  // simulate
  synth::WorldConfig world_config;

  // train-demo
  double embed_rate = 1e-3;
  std::size_t embed_dim = 16;
  std::size_t train_epochs = 1;
  std::string loss = "centroid-softplus";
  double margin = 1.0;
  double alpha = 0.55;
  double mu = 0.5;
  double test_fraction = 0.3;
};

[[noreturn]] void invalid(const std::string& flag, const std::string& why) {
  throw ValidationError("--" + flag + ": " + why);
}

std::string default_cache_dir() {
  const char* env = std::getenv(kCacheDirEnv);
  return env && *env ? env : ".hpim_cache";
}

std::optional<double> parse_sigma(const std::string& text) {
  if (text == "auto") return std::nullopt;
  double v;
  try {
    v = io::parse_double(text);
  } catch (const ParseError&) {
    invalid("sigma", "expected 'auto' or a positive number, got '" + text + "'");
  }
  if (!(v > 0.0)) invalid("sigma", "must be > 0");
  return v;
}

void check_order(std::size_t order) {
  if (order < 1 || order > moments::kMaxOrder) {
    invalid("order", "L must be in [1, " + std::to_string(moments::kMaxOrder) + "]");
  }
}

/// Reads key=value lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

/// Inserts config-file values for every flag not given on the command line.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (config_path.empty() || args.empty()) return args;
  std::vector<std::string> extra;
  for (const auto& [key, value] : read_config_file(config_path)) {
    const std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    }
    if (given) continue;
    if (value == "true") {
      extra.push_back(flag);
    } else if (value != "false") {
      extra.push_back(flag + "=" + value);
    }
  }
  args.insert(args.begin() + 1, extra.begin(), extra.end());
  return args;
}

AttributeSchema load_valid_schema(const std::string& path) {
  if (path.empty()) invalid("schema", "required");
  auto schema = load_schema(path);
  const auto report = validate_schema(schema);
  if (!report.ok()) {
    std::string msg = "invalid schema " + path + ":";
    for (const auto& v : report.violations) msg += "\n  " + v;
    throw ValidationError(msg);
  }
  return schema;
}

std::vector<sampler::IdentityImages> images_of(const std::vector<IdentityCodeSet>& sets) {
  std::vector<sampler::IdentityImages> out;
  for (const auto& s : sets) {
    sampler::IdentityImages ii{s.identity_id, {}};
    for (const auto& c : s.codes) ii.image_ids.push_back(c.image_id);
    out.push_back(std::move(ii));
  }
  return out;
}

/// CMD matrix for a code file, read from the cache when the content hash
/// and order match. `key_extra` distinguishes matrices computed from a
/// subset of the file.
moments::CmdMatrix cached_cmd(const std::string& codes_path, const AttributeSchema& schema,
                              const std::vector<IdentityCodeSet>& sets, std::size_t order,
                              const std::string& cache_dir, std::ostream& log,
                              const std::string& key_extra = "") {
  const std::string hash = io::content_hash(io::read_file(codes_path) + key_extra);
  moments::MatrixCache cache(cache_dir.empty() ? default_cache_dir() : cache_dir);
  if (auto hit = cache.load(hash, order, schema.total_code_dim())) {
    log << "cache hit: " << cache.path_for(hash, order).string() << "\n";
    return *hit;
  }
  log << "cache miss: computing " << sets.size() << "x" << sets.size() << " CMD matrix (L="
      << order << ")\n";
  auto m = moments::cmd_matrix(sets, order);
  cache.store(m, schema.total_code_dim(), hash);
  return m;
}

int cmd_validate(const Options& o, std::ostream& log) {
  auto schema = load_schema(o.schema);
  const auto report = validate_schema(schema);
  if (!report.ok()) {
    for (const auto& v : report.violations) log << "violation: " << v << "\n";
    return kValidationFailure;
  }
  log << "schema: " << schema.num_groups() << " groups, M=" << schema.total_attributes()
      << ", code_dim=" << schema.total_code_dim() << "\n";
  if (!o.codes.empty()) {
    const auto sets = load_codes(o.codes, schema);
    std::size_t n = 0;
    for (const auto& s : sets) n += s.codes.size();
    log << "codes: " << n << " records over " << sets.size() << " identities\n";
  }
  log << "ok\n";
  return kOk;
}

int cmd_simulate(const Options& o, std::ostream& log) {
  if (o.out.empty()) invalid("out", "output directory required");
  auto cfg = o.world_config;
  cfg.seed = o.seed;
  const auto world = synth::generate_world(cfg);
  synth::write_world(world, o.out);
  log << "simulated " << world.identities.size() << " identities, " << world.codes.size()
      << " images -> " << o.out << "\n";
  return kOk;
}

describer::FitConfig fit_config(const Options& o) {
  if (!(o.rate > 0.0)) invalid("rate", "must be > 0");
  if (!(o.growth > 1.0)) invalid("growth", "must be > 1");
  describer::FitConfig c;
  c.learning_rate = o.rate;
  c.max_epochs = o.epochs;
  c.steps_per_epoch = o.steps;
  c.growth_factor = o.growth;
  return c;
}

int cmd_spl_fit(const Options& o, std::ostream& log) {
  const auto schema = load_valid_schema(o.schema);
  if (o.features.empty()) invalid("features", "required");
  if (o.out.empty()) invalid("out", "model output path required");
  const auto samples = describer::load_samples(o.features, schema);
  if (samples.empty()) invalid("features", "no samples");
  for (const auto& s : samples) {
    if (s.labels.empty()) throw ValidationError("image " + s.image_id + " has no labels");
  }
  const auto init = describer::GroupSoftmaxModel::random(schema, samples.front().feature.size(),
                                                         o.seed);
  const auto cfg = fit_config(o);
  auto result = o.no_spl ? describer::fit_unweighted(init, samples, cfg)
                         : describer::fit_spl(init, samples, cfg);
  io::write_file(o.out, describer::model_to_json(result.model));
  if (!o.log_file.empty()) io::write_file(o.log_file, spl::schedule_to_csv(result.schedule));
  log << (o.no_spl ? "unweighted" : "self-paced") << " fit: " << result.epochs_run
      << " epochs, train group accuracy "
      << io::format_double(describer::group_accuracy(result.model, samples)) << "\n";
  return kOk;
}

int cmd_encode(const Options& o, std::ostream& log) {
  const auto schema = load_valid_schema(o.schema);
  if (o.model.empty()) invalid("model", "required");
  if (o.features.empty()) invalid("features", "required");
  if (o.out.empty()) invalid("out", "codes output path required");
  const auto model = describer::model_from_json(io::read_file(o.model), schema);
  const auto samples = describer::load_samples(o.features, schema);
  std::vector<DescriptionCode> codes;
  for (const auto& s : samples) {
    if (s.identity_id.empty()) throw ValidationError("image " + s.image_id + " has no identity_id");
    codes.push_back(describer::predict_code(model, s.feature, s.image_id, s.identity_id));
  }
  save_codes(o.out, codes);
  log << "encoded " << codes.size() << " images -> " << o.out << "\n";
  return kOk;
}

int cmd_moments(const Options& o, std::ostream& log) {
  check_order(o.order);
  const auto schema = load_valid_schema(o.schema);
  if (o.codes.empty()) invalid("codes", "required");
  const auto sets = load_codes(o.codes, schema);
  if (sets.size() < 2) throw ValidationError("need at least 2 identities, got " +
                                             std::to_string(sets.size()));
  const auto m = cached_cmd(o.codes, schema, sets, o.order, o.cache_dir, log);
  if (!o.out.empty()) {
    io::write_file(o.out, moments::to_csv(m));
    log << "wrote " << o.out << "\n";
  }
  return kOk;
}

sampler::PlanConfig plan_config(const Options& o, std::size_t n) {
  sampler::PlanConfig c;
  if (o.p < 2) invalid("p", "P must be >= 2");
  if (o.p > n) {
    throw ValidationError("P=" + std::to_string(o.p) + " exceeds the number of identities N=" +
                          std::to_string(n));
  }
  if (o.s < 1) invalid("s", "S must be >= 1");
  if (o.k && *o.k > n - 1) {
    throw ValidationError("K=" + std::to_string(*o.k) + " exceeds N-1=" + std::to_string(n - 1));
  }
  c.k = o.k;
  c.p = o.p;
  c.s = o.s;
  c.sigma = parse_sigma(o.sigma);
  if (!(o.sigma_scale > 0.0)) invalid("sigma-scale", "must be > 0");
  c.sigma_scale = o.sigma_scale;
  c.seed = o.seed;
  if (o.anchor_mode == "uniform") {
    c.anchor_mode = sampler::AnchorMode::kUniform;
  } else if (o.anchor_mode == "round-robin") {
    c.anchor_mode = sampler::AnchorMode::kRoundRobin;
  } else {
    invalid("anchor-mode", "expected uniform or round-robin");
  }
  if (o.policy == "hpim") {
    c.policy_mode = sampler::PolicyMode::kHpim;
  } else if (o.policy == "random") {
    c.policy_mode = sampler::PolicyMode::kRandom;
  } else {
    invalid("policy", "expected hpim or random");
  }
  return c;
}

int cmd_plan(const Options& o, std::ostream& log) {
  check_order(o.order);
  const auto schema = load_valid_schema(o.schema);
  if (o.codes.empty()) invalid("codes", "required");
  if (o.out.empty()) invalid("out", "plan output path required");
  const auto sets = load_codes(o.codes, schema);
  if (sets.size() < 2) throw ValidationError("need at least 2 identities");
  const auto cfg = plan_config(o, sets.size());
  const auto m = cached_cmd(o.codes, schema, sets, o.order, o.cache_dir, log);
  sampler::BatchPlanner planner(images_of(sets), m, cfg);
  const auto plans = planner.plan_many(o.batches);
  io::write_file(o.out, sampler::plans_to_jsonl(plans));
  log << "planned " << plans.size() << " batches (K=" << planner.k()
      << ", sigma=" << io::format_double(planner.similarity().sigma) << ") -> " << o.out << "\n";
  return kOk;
}

std::string embeddings_to_jsonl(const triplet::RetrievalSet& set) {
  std::string out;
  for (std::size_t r = 0; r < set.embeddings.rows(); ++r) {
    const auto row = set.embeddings.row(r);
    out += json{{"image_id", set.images[r]},
                {"identity_id", set.identities[r]},
                {"embedding", std::vector<double>(row.begin(), row.end())}}
               .dump();
    out += '\n';
  }
  return out;
}

triplet::RetrievalSet load_embeddings(const fs::path& path) {
  triplet::RetrievalSet set;
  std::vector<std::vector<double>> rows;
  io::for_each_json_line(path, [&](const json& j, std::size_t lineno) {
    set.images.push_back(j.at("image_id").get<std::string>());
    set.identities.push_back(j.at("identity_id").get<std::string>());
    rows.push_back(j.at("embedding").get<std::vector<double>>());
    if (rows.back().size() != rows.front().size()) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": embedding dimension differs from earlier records");
    }
  });
  set.embeddings = Matrix(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(rows[r].begin(), rows[r].end(), set.embeddings.row(r).begin());
  }
  return set;
}

int cmd_eval(const Options& o, std::ostream& log) {
  if (o.query.empty()) invalid("query", "required");
  if (o.gallery.empty()) invalid("gallery", "required");
  const auto report =
      triplet::evaluate_retrieval(load_embeddings(o.query), load_embeddings(o.gallery));
  const auto text = triplet::report_to_json(report);
  if (!o.out.empty()) io::write_file(o.out, text);
  log << "rank1=" << io::format_double(report.rank(1))
      << " mAP=" << io::format_double(report.mean_ap) << "\n";
  return kOk;
}

/// Held-out retrieval split: per identity, the last `fraction` of its images
/// (at least two) are held out. Every held-out image is a query against the
/// whole held-out set, its own entry excluded. Moments and plans only see
/// the training images.
struct Split {
  std::vector<IdentityCodeSet> train;
  std::vector<std::string> held_out;
};

Split split_images(const std::vector<IdentityCodeSet>& sets, double fraction) {
  Split split;
  for (const auto& s : sets) {
    const std::size_t n = s.codes.size();
    auto held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    held = std::max<std::size_t>(held, 2);
    if (n < held + 1) {
      throw ValidationError("identity " + s.identity_id + " has " + std::to_string(n) +
                            " images; need at least " + std::to_string(held + 1) +
                            " for the held-out split");
    }
    split.train.push_back({s.identity_id, {s.codes.begin(), s.codes.end() - held}});
    for (std::size_t i = n - held; i < n; ++i) split.held_out.push_back(s.codes[i].image_id);
  }
  return split;
}

triplet::RetrievalSet embed_images(const triplet::LinearEmbedder& e,
                                   const triplet::FeatureTable& table,
                                   const std::vector<std::string>& images) {
  triplet::RetrievalSet set;
  Matrix features(images.size(), table.dim());
  for (std::size_t r = 0; r < images.size(); ++r) {
    const auto f = table.feature(images[r]);
    std::copy(f.begin(), f.end(), features.row(r).begin());
    set.images.push_back(images[r]);
    set.identities.push_back(table.identity(images[r]));
  }
  set.embeddings = e.embed(features);
  return set;
}

int cmd_train_demo(const Options& o, std::ostream& log) {
  check_order(o.order);
  if (o.world.empty()) invalid("world", "directory with schema.json, codes.jsonl, features.jsonl required");
  if (o.out.empty()) invalid("out", "output directory required");
  if (!(o.test_fraction > 0.0 && o.test_fraction < 1.0)) invalid("test-fraction", "must be in (0, 1)");
  const fs::path dir = o.world;
  const fs::path out = o.out;
  const auto schema = load_valid_schema((dir / "schema.json").string());
  const auto sets = load_codes(dir / "codes.jsonl", schema);
  const auto samples = describer::load_samples(dir / "features.jsonl", schema);
  triplet::FeatureTable table;
  for (const auto& s : samples) table.add(s.image_id, s.identity_id, s.feature);

  const auto split = split_images(sets, o.test_fraction);
  const auto m = cached_cmd((dir / "codes.jsonl").string(), schema, split.train, o.order,
                            o.cache_dir, log, "\ntrain-split " + io::format_double(o.test_fraction));

  triplet::TrainConfig tc;
  tc.embed_dim = o.embed_dim;
  tc.learning_rate = o.embed_rate;
  tc.epochs = o.train_epochs;
  tc.loss = triplet::parse_loss_kind(o.loss);
  tc.margin = o.margin;
  tc.alpha = o.alpha;
  tc.mu = o.mu;
  tc.seed = o.seed;
  const triplet::LinearEmbedder init(table.dim(), tc.embed_dim, tc.seed);

  json summary = json::object();
  for (const std::string mode : {"hpim", "random"}) {
    Options po = o;
    po.policy = mode;
    sampler::BatchPlanner planner(images_of(split.train), m, plan_config(po, sets.size()));
    const auto plans = planner.plan_many(o.batches);
    double active = 0.0;
    for (const auto& p : plans) active += triplet::evaluate_batch(init, table, p, tc).active_fraction;
    active /= static_cast<double>(std::max<std::size_t>(plans.size(), 1));

    const auto result = triplet::train_demo(init, table, plans, tc);
    const auto held = embed_images(result.embedder, table, split.held_out);
    const auto report = triplet::evaluate_retrieval(held, held);

    io::write_file(out / ("plans_" + mode + ".jsonl"), sampler::plans_to_jsonl(plans));
    io::write_file(out / ("metrics_" + mode + ".csv"), triplet::metrics_to_csv(result.log));
    io::write_file(out / ("eval_" + mode + ".json"), triplet::report_to_json(report));
    io::write_file(out / ("embeddings_" + mode + ".jsonl"), embeddings_to_jsonl(held));
    summary[mode] = {{"initial_active_fraction", active},
                     {"rank1", report.rank(1)},
                     {"mAP", report.mean_ap}};
    log << mode << ": initial active fraction " << io::format_double(active) << ", rank1 "
        << io::format_double(report.rank(1)) << ", mAP " << io::format_double(report.mean_ap)
        << "\n";
  }
  const double ra = summary["random"]["initial_active_fraction"].get<double>();
  summary["active_fraction_ratio"] =
      ra > 0.0 ? summary["hpim"]["initial_active_fraction"].get<double>() / ra : 0.0;
  io::write_file(out / "summary.json", summary.dump(2) + "\n");
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& log) {
  Options o;
  CLI::App app{"Hard person identity mining: attribute-moment batch planning for triplet "
               "metric learning"};
  app.require_subcommand(1);
  // Config-file values are inserted ahead of the user's flags, so the last
  // occurrence wins whichever alias (-P / --p) was typed.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Print help for every command");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key=value config file; command-line flags win");
    sub->add_option("--seed", o.seed, "Seed for all randomness");
  };
  auto add_schema = [&](CLI::App* sub) {
    sub->add_option("--schema", o.schema, "Attribute schema (JSON)");
  };
  auto add_plan_flags = [&](CLI::App* sub) {
    sub->add_option("--order,-L", o.order, "CMD moment order L (1-8)");
    sub->add_option("--k,-K", o.k, "Neighbours in the policy (default min(10, N-1))");
    sub->add_option("--p,-P", o.p, "Identities per batch");
    sub->add_option("--s,-S", o.s, "Images per identity");
    sub->add_option("--sigma", o.sigma, "Kernel bandwidth or 'auto' (median heuristic)");
    sub->add_option("--sigma-scale", o.sigma_scale,
                    "Multiplier on the median heuristic when --sigma is auto");
    sub->add_option("--batches", o.batches, "Number of batches to plan");
    sub->add_option("--anchor-mode", o.anchor_mode, "uniform | round-robin");
    sub->add_option("--cache-dir", o.cache_dir, "CMD cache directory")
        ->envname(kCacheDirEnv);
  };

  auto* validate = app.add_subcommand("validate", "Check a schema and optional code file");
  add_common(validate);
  add_schema(validate);
  validate->add_option("--codes", o.codes, "Description codes (JSON lines)");

  auto& wc = o.world_config;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic world");
  add_common(simulate);
  simulate->add_option("--out", o.out, "Output directory");
  simulate->add_option("--identities", wc.num_identities, "Number of identities");
  simulate->add_option("--min-images", wc.min_images, "Minimum images per identity");
  simulate->add_option("--max-images", wc.max_images, "Maximum images per identity");
  simulate->add_option("--code-noise", wc.code_noise, "Code perturbation scale");
  simulate->add_option("--feature-dim", wc.feature_dim, "Feature dimension");
  simulate->add_option("--feature-noise", wc.feature_noise, "Feature noise scale");
  simulate->add_option("--identity-scale", wc.identity_scale, "Identity prototype scale");
  simulate->add_option("--attribute-scale", wc.attribute_scale, "Attribute anchor scale");
  simulate->add_option("--corruption", wc.label_corruption, "Label corruption rate");
  simulate->add_option("--hard-pairs", wc.hard_pairs, "Near-clone identity pairs");
  simulate->add_option("--hard-epsilon", wc.hard_pair_epsilon, "Clone perturbation weight");
  simulate->add_option("--concentration", wc.profile_concentration,
                       "Dirichlet concentration of identity profiles (1 = uniform)");

  auto* spl_fit = app.add_subcommand("spl-fit", "Train the attribute describer (self-paced)");
  add_common(spl_fit);
  add_schema(spl_fit);
  spl_fit->add_option("--features", o.features, "Labelled features (JSON lines)");
  spl_fit->add_option("--out", o.out, "Model output (JSON)");
  spl_fit->add_option("--log", o.log_file, "Threshold schedule CSV");
  spl_fit->add_option("--rate", o.rate, "Learning rate");
  spl_fit->add_option("--epochs", o.epochs, "Maximum epochs");
  spl_fit->add_option("--steps", o.steps, "Gradient steps per epoch");
  spl_fit->add_option("--growth", o.growth, "Threshold growth factor per epoch (> 1)");
  spl_fit->add_flag("--no-spl", o.no_spl, "Train without self-paced weighting");

  auto* encode = app.add_subcommand("encode", "Encode features into description codes");
  add_common(encode);
  add_schema(encode);
  encode->add_option("--model", o.model, "Trained describer (JSON)");
  encode->add_option("--features", o.features, "Features (JSON lines)");
  encode->add_option("--out", o.out, "Codes output (JSON lines)");

  auto* moments_cmd = app.add_subcommand("moments", "Compute (or load) the CMD matrix");
  add_common(moments_cmd);
  add_schema(moments_cmd);
  moments_cmd->add_option("--codes", o.codes, "Description codes (JSON lines)");
  moments_cmd->add_option("--order,-L", o.order, "CMD moment order L (1-8)");
  moments_cmd->add_option("--out", o.out, "CSV export of the matrix");
  moments_cmd->add_option("--cache-dir", o.cache_dir, "CMD cache directory")->envname(kCacheDirEnv);

  auto* plan = app.add_subcommand("plan", "Plan training batches");
  add_common(plan);
  add_schema(plan);
  add_plan_flags(plan);
  plan->add_option("--codes", o.codes, "Description codes (JSON lines)");
  plan->add_option("--policy", o.policy, "hpim | random");
  plan->add_option("--out", o.out, "Plan output (JSON lines)");

  auto* train = app.add_subcommand("train-demo", "Paired HPIM vs random training experiment");
  add_common(train);
  add_plan_flags(train);
  train->add_option("--world", o.world, "Directory written by simulate");
  train->add_option("--out", o.out, "Output directory");
  train->add_option("--rate", o.embed_rate, "Embedder learning rate");
  train->add_option("--embed-dim", o.embed_dim, "Embedding dimension");
  train->add_option("--epochs", o.train_epochs, "Passes over the planned batches");
  train->add_option("--loss", o.loss,
                    "batch-all | lifted | batch-hard | batch-hard-softplus | centroid-hinge | "
                    "centroid-softplus");
  train->add_option("--margin", o.margin, "Triplet margin");
  train->add_option("--alpha", o.alpha, "Centroid regulariser weight");
  train->add_option("--mu", o.mu, "Pull/push balance for batch-all losses");
  train->add_option("--test-fraction", o.test_fraction, "Held-out share of each identity");

  auto* eval = app.add_subcommand("eval", "Retrieval metrics for query/gallery embeddings");
  add_common(eval);
  eval->add_option("--query", o.query, "Query embeddings (JSON lines)");
  eval->add_option("--gallery", o.gallery, "Gallery embeddings (JSON lines)");
  eval->add_option("--out", o.out, "Report output (JSON)");

  try {
    const auto args = merge_config(raw_args);
    std::vector<const char*> argv{"hpim"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, log, log);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, log, log);
    } catch (const CLI::ParseError& e) {
      app.exit(e, log, log);
      return kRuntimeError;
    }

    if (validate->parsed()) return cmd_validate(o, log);
    if (simulate->parsed()) return cmd_simulate(o, log);
    if (spl_fit->parsed()) return cmd_spl_fit(o, log);
    if (encode->parsed()) return cmd_encode(o, log);
    if (moments_cmd->parsed()) return cmd_moments(o, log);
    if (plan->parsed()) return cmd_plan(o, log);
    if (train->parsed()) return cmd_train_demo(o, log);
    if (eval->parsed()) return cmd_eval(o, log);
    return kRuntimeError;
  } catch (const ValidationError& e) {
    log << "error: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const ParseError& e) {
    log << "error: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace hpim::cli
