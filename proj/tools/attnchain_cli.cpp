// attnchain: command-line front end for attention chains.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "attnchain/chain.hpp"
#include "attnchain/error.hpp"
#include "attnchain/ops.hpp"
#include "attnchain/parallel.hpp"
#include "attnchain/segmentation.hpp"
#include "attnchain/spectral.hpp"
#include "attnchain/synth.hpp"
#include "attnchain/tensor_io.hpp"

#ifndef ATTNCHAIN_VERSION
#define ATTNCHAIN_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace attnchain;
using Json = nlohmann::ordered_json;

namespace {

struct Common {
  double alpha = 0.85;
  double tau = 1e-10;
  std::size_t max_iters = 1000;
  std::size_t threads = 0;
  std::uint64_t seed = 0;

  ChainConfig chain() const {
    ChainConfig cfg{alpha, tau, max_iters};
    cfg.validate();
    return cfg;
  }
  std::size_t workers() const { return resolve_threads(threads); }
};

void add_chain_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--alpha", c.alpha, "teleport damping, in (0, 1)");
  cmd->add_option("--tau", c.tau, "stop when the squared L2 step falls below this");
  cmd->add_option("--max-iters", c.max_iters, "power-iteration cap");
}

void add_threads_flag(CLI::App* cmd, Common& c) {
  cmd->add_option("--threads", c.threads, "worker threads, 0 = all cores")
      ->envname("ATTNCHAIN_THREADS");
}

[[noreturn]] void usage(const std::string& msg) { fail(ErrorCode::kInvalidArgument, msg); }

bool is_usage_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParseError:
    case ErrorCode::kSchemaViolation:
    case ErrorCode::kMissingFile:
    case ErrorCode::kBadMagic:
    case ErrorCode::kUnsupportedVersion:
    case ErrorCode::kUnsupportedDtype:
    case ErrorCode::kFortranOrderUnsupported:
    case ErrorCode::kTruncatedData:
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kAlphaOutOfRange:
      return true;
    default:
      return false;
  }
}

// Records every setting that can change an output byte. Thread counts are
// left out on purpose: they never do.
class Provenance {
 public:
  explicit Provenance(std::string command) {
    doc_["tool"] = "attnchain";
    doc_["version"] = ATTNCHAIN_VERSION;
    doc_["command"] = std::move(command);
    doc_["inputs"] = Json::array();
    doc_["options"] = Json::object();
  }
  void input(const std::string& path) { doc_["inputs"].push_back(path); }
  template <typename T>
  void set(const std::string& key, const T& value) { doc_["options"][key] = value; }
  void chain(const Common& c) {
    set("alpha", c.alpha);
    set("tau", c.tau);
    set("max_iters", c.max_iters);
  }
  void write(const fs::path& dir) const { io::write_text(dir / "provenance.json", doc_.dump(2) + "\n"); }

 private:
  Json doc_;
};

std::optional<Grid> parse_grid(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto x = text.find('x');
  if (x == std::string::npos) usage("grid must look like HxW, got '" + text + "'");
  try {
    std::size_t used = 0;
    const std::string h = text.substr(0, x), w = text.substr(x + 1);
    Grid g{std::stoul(h, &used), 0};
    if (used != h.size()) throw std::invalid_argument(h);
    g.width = std::stoul(w, &used);
    if (used != w.size()) throw std::invalid_argument(w);
    if (g.cells() == 0) throw std::invalid_argument(text);
    return g;
  } catch (const std::logic_error&) {
    usage("grid must look like HxW, got '" + text + "'");
  }
}

// "2", "1,2,4", "inf"
std::vector<std::size_t> parse_bounces(const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (item == "inf") {
      out.push_back(kSteadyStateBounces);
    } else {
      try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(item, &used);
        if (used != item.size() || item.front() == '-') throw std::invalid_argument(item);
        out.push_back(v);
      } catch (const std::logic_error&) {
        usage("bounce counts are integers or 'inf', got '" + item + "'");
      }
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string bounce_label(std::size_t n) {
  return n == kSteadyStateBounces ? "inf" : std::to_string(n);
}

io::HeatmapFormat parse_heatmap(const std::string& s) {
  return s == "csv" ? io::HeatmapFormat::kCsv : io::HeatmapFormat::kPgm;
}

std::string heatmap_ext(io::HeatmapFormat f) { return f == io::HeatmapFormat::kCsv ? ".csv" : ".pgm"; }

HeadScheme scheme_from(const std::string& name) {
  return parse_head_scheme(name) == HeadScheme::Kind::kLambda2 ? HeadScheme::by_lambda2()
                                                               : HeadScheme::uniform();
}

struct Loaded {
  io::Manifest manifest;
  AttentionTensor tensor;
};

Loaded load(const std::string& path, std::size_t threads) {
  auto manifest = io::load_manifest(path);
  auto tensor = io::load_tensor(manifest, RepairPolicy::kClampAndRenormalize, threads);
  return {std::move(manifest), std::move(tensor)};
}

// One head, one layer's aggregate, or every layer's aggregate.
StochasticMatrix pick_chain(const AttentionTensor& t, std::optional<std::size_t> layer,
                            std::optional<std::size_t> head, const HeadScheme& scheme,
                            std::size_t threads) {
  if (head) {
    if (!layer) usage("--head needs --layer");
    const std::size_t pos = t.layer_position(*layer);
    if (*head >= t.heads(pos)) {
      fail(ErrorCode::kIndexOutOfRange, "layer " + std::to_string(*layer) + " has " +
                                            std::to_string(t.heads(pos)) + " heads");
    }
    return t.matrix(pos, *head);
  }
  std::vector<std::size_t> ids;
  if (layer) ids.push_back(*layer);
  return aggregate_layers(t, ids, scheme, threads);
}

// token,score,rank with rank 1 = highest score, ties broken by index.
void write_vector(const fs::path& path, const StateVector& v) {
  std::string out = "token,score,rank\n";
  std::vector<std::size_t> rank(v.size());
  const auto order = rank_order(v.probs());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out += std::to_string(i) + "," + io::format_real(v[i]) + "," + std::to_string(rank[i]) + "\n";
  }
  io::write_text(path, out);
}

void maybe_heatmap(const AttentionTensor& t, const StateVector& v, const fs::path& stem,
                   const std::string& format) {
  if (format == "none" || !t.grid()) return;
  const auto f = parse_heatmap(format);
  fs::path p = stem;
  p += heatmap_ext(f);
  io::export_heatmap(v.probs(), *t.grid(), t.special_tokens(), p, f);
}

// ---------------------------------------------------------------- validate

struct ValidateArgs {
  std::string manifest;
  double tolerance = 1e-3;
};

int run_validate(const ValidateArgs& a, const Common& c) {
  const auto manifest = io::load_manifest(a.manifest);
  const auto reports = io::diagnose(manifest, a.tolerance, c.workers());
  std::printf("%-6s %-5s %-14s %-14s %-9s %s\n", "layer", "head", "max_row_dev", "min_entry",
              "nonfinite", "status");
  std::size_t failed = 0;
  double worst = 0.0;
  for (const auto& r : reports) {
    std::printf("%-6zu %-5zu %-14.6g %-14.6g %-9zu %s\n", r.layer, r.head, r.max_row_deviation,
                r.min_entry, r.nonfinite, r.passes ? "ok" : "FAIL");
    worst = std::max(worst, r.max_row_deviation);
    if (!r.passes) {
      ++failed;
      if (r.first_nonfinite) {
        std::fprintf(stderr, "layer %zu head %zu: non-finite entry at row %zu column %zu\n",
                     r.layer, r.head, (*r.first_nonfinite)[0], (*r.first_nonfinite)[1]);
      } else {
        std::fprintf(stderr, "layer %zu head %zu: row-sum deviation %.3g, min entry %.3g\n",
                     r.layer, r.head, r.max_row_deviation, r.min_entry);
      }
    }
  }
  std::printf("%zu matrices, %zu failed, max row deviation %.3g\n", reports.size(), failed, worst);
  return failed == 0 ? 0 : 1;
}

// --------------------------------------------------------------- tokenrank

struct SelectArgs {
  std::string manifest;
  std::optional<std::size_t> layer;
  std::optional<std::size_t> head;
  std::string aggregate = "uniform";
  std::string direction = "incoming";
  std::string heatmap = "pgm";
  std::string out;
};

void add_select_flags(CLI::App* cmd, SelectArgs& s) {
  cmd->add_option("manifest", s.manifest, "manifest.json")->required();
  cmd->add_option("--layer", s.layer, "layer id (default: average over all layers)");
  cmd->add_option("--head", s.head, "single head within --layer");
  cmd->add_option("--aggregate", s.aggregate, "head weighting")
      ->check(CLI::IsMember({"uniform", "lambda2"}));
  cmd->add_option("--direction", s.direction)->check(CLI::IsMember({"incoming", "outgoing"}));
  cmd->add_option("--heatmap", s.heatmap, "heatmap format when the manifest has a grid")
      ->check(CLI::IsMember({"pgm", "csv", "none"}));
  cmd->add_option("--out", s.out, "output directory")->required();
}

void record_select(Provenance& p, const SelectArgs& s) {
  p.input(s.manifest);
  p.set("layer", s.layer ? Json(*s.layer) : Json(nullptr));
  p.set("head", s.head ? Json(*s.head) : Json(nullptr));
  p.set("aggregate", s.aggregate);
  p.set("direction", s.direction);
  p.set("heatmap", s.heatmap);
}

int run_tokenrank(const SelectArgs& s, const Common& c) {
  const auto cfg = c.chain();
  const auto [manifest, tensor] = load(s.manifest, c.workers());
  const auto chain = pick_chain(tensor, s.layer, s.head, scheme_from(s.aggregate), c.workers());
  const auto result = token_rank(chain, cfg, parse_direction(s.direction));

  const fs::path out(s.out);
  fs::create_directories(out);
  write_vector(out / "tokenrank.csv", result.vector);
  maybe_heatmap(tensor, result.vector, out / "tokenrank", s.heatmap);
  Provenance p("tokenrank");
  record_select(p, s);
  p.chain(c);
  p.write(out);

  std::printf("iterations %zu residual %.3g converged %s\n", result.iterations, result.residual,
              result.converged ? "yes" : "no");
  const auto order = rank_order(result.vector.probs());
  std::printf("top tokens:");
  for (std::size_t k = 0; k < std::min<std::size_t>(5, order.size()); ++k) {
    std::printf(" %zu (%.4g)", order[k], result.vector[order[k]]);
  }
  std::printf("\n");
  if (!result.converged) {
    std::fprintf(stderr, "warning: stopped after %zu iterations without reaching tau\n",
                 result.iterations);
  }
  return 0;
}

// ------------------------------------------------------------------ select

struct SelectOpArgs {
  SelectArgs select;
  std::optional<std::size_t> row;
  std::optional<std::size_t> column;
  bool column_sum = false;
};

int run_select(const SelectOpArgs& a, const Common& c) {
  const auto& s = a.select;
  const int picked = int(a.row.has_value()) + int(a.column.has_value()) + int(a.column_sum);
  if (picked != 1) usage("give exactly one of --row, --column, --column-sum");
  const auto [manifest, tensor] = load(s.manifest, c.workers());
  const auto chain = pick_chain(tensor, s.layer, s.head, scheme_from(s.aggregate), c.workers());
  const StateVector v = a.row      ? row_select(chain, *a.row)
                        : a.column ? column_select(chain, *a.column)
                                   : column_sum(chain);
  const std::string stem = a.row      ? "row_" + std::to_string(*a.row)
                           : a.column ? "column_" + std::to_string(*a.column)
                                      : std::string("column_sum");
  const fs::path out(s.out);
  fs::create_directories(out);
  write_vector(out / (stem + ".csv"), v);
  maybe_heatmap(tensor, v, out / stem, s.heatmap);
  Provenance p("select");
  record_select(p, s);
  p.set("row", a.row ? Json(*a.row) : Json(nullptr));
  p.set("column", a.column ? Json(*a.column) : Json(nullptr));
  p.set("column_sum", a.column_sum);
  p.write(out);
  std::printf("wrote %s.csv\n", stem.c_str());
  return 0;
}

// ------------------------------------------------------------------ bounce

struct BounceArgs {
  SelectArgs select;
  std::size_t token = 0;
  std::string n = "1,2,inf";
  bool teleport = false;
};

int run_bounce(const BounceArgs& b, const Common& c) {
  const auto cfg = c.chain();
  const auto& s = b.select;
  const auto counts = parse_bounces(b.n);
  const auto [manifest, tensor] = load(s.manifest, c.workers());
  const auto chain = pick_chain(tensor, s.layer, s.head, scheme_from(s.aggregate), c.workers());
  const Direction dir = parse_direction(s.direction);
  if (b.token >= chain.size()) {
    fail(ErrorCode::kIndexOutOfRange, "token " + std::to_string(b.token) + " of " +
                                          std::to_string(chain.size()));
  }

  const fs::path out(s.out);
  fs::create_directories(out);
  std::optional<StateVector> limit;
  if (std::find(counts.begin(), counts.end(), kSteadyStateBounces) != counts.end()) {
    limit = token_rank(chain, cfg, dir).vector;
  }
  for (std::size_t n : counts) {
    const StateVector v = n == kSteadyStateBounces ? *limit
                          : b.teleport ? teleported_bounce(chain, b.token, n, dir, cfg.alpha)
                                       : multi_bounce(chain, b.token, n, dir);
    const std::string stem = "bounce_n" + bounce_label(n);
    write_vector(out / (stem + ".csv"), v);
    maybe_heatmap(tensor, v, out / stem, s.heatmap);
    if (limit) {
      double l1 = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) l1 += std::abs(v[i] - (*limit)[i]);
      std::printf("n=%s l1_to_tokenrank %.6g\n", bounce_label(n).c_str(), l1);
    } else {
      std::printf("n=%s written\n", bounce_label(n).c_str());
    }
  }
  Provenance p("bounce");
  record_select(p, s);
  p.set("token", b.token);
  p.set("n", b.n);
  p.set("teleport", b.teleport);
  p.chain(c);
  p.write(out);
  return 0;
}

// ----------------------------------------------------------------- lambda2

struct Lambda2Args {
  std::string manifest;
  std::optional<std::size_t> layer;
  std::string method = "auto";
  bool adjusted = false;
  std::string out;
};

int run_lambda2(const Lambda2Args& a, const Common& c) {
  const auto [manifest, tensor] = load(a.manifest, c.workers());
  Lambda2Options opts;
  opts.method = a.method == "dense"      ? SpectralMethod::kDense
                : a.method == "deflated" ? SpectralMethod::kDeflatedPower
                                         : SpectralMethod::kAuto;
  opts.adjusted = a.adjusted;
  opts.alpha = c.alpha;
  if (a.adjusted && !(c.alpha > 0.0 && c.alpha < 1.0)) {
    fail(ErrorCode::kAlphaOutOfRange, "alpha must lie in (0, 1)");
  }

  std::vector<std::size_t> positions;
  if (a.layer) {
    positions.push_back(tensor.layer_position(*a.layer));
  } else {
    for (std::size_t l = 0; l < tensor.layers(); ++l) positions.push_back(l);
  }
  std::string csv = "layer,head,lambda2,weight\n";
  std::printf("%-6s %-5s %-12s %s\n", "layer", "head", "lambda2", "weight");
  for (std::size_t pos : positions) {
    const auto summary = lambda2_weights(tensor.layer(pos), opts, c.workers());
    const std::size_t id = tensor.layer_ids()[pos];
    for (std::size_t h = 0; h < summary.weights.size(); ++h) {
      std::printf("%-6zu %-5zu %-12.6g %.6g\n", id, h, summary.per_head_lambda2[h],
                  summary.weights[h]);
      csv += std::to_string(id) + "," + std::to_string(h) + "," +
             io::format_real(summary.per_head_lambda2[h]) + "," +
             io::format_real(summary.weights[h]) + "\n";
    }
    if (summary.uniform_fallback) {
      std::printf("layer %zu: every |lambda2| is ~0, weights fall back to uniform\n", id);
    }
  }
  if (!a.out.empty()) {
    const fs::path out(a.out);
    fs::create_directories(out);
    io::write_text(out / "lambda2.csv", csv);
    Provenance p("lambda2");
    p.input(a.manifest);
    p.set("layer", a.layer ? Json(*a.layer) : Json(nullptr));
    p.set("method", a.method);
    p.set("adjusted", a.adjusted);
    p.set("alpha", c.alpha);
    p.write(out);
  }
  return 0;
}

// ----------------------------------------------------------------- segment

struct SegmentArgs {
  std::vector<std::string> manifests;
  std::vector<std::string> gt;
  std::optional<std::size_t> token;
  std::string n = "2";
  std::string direction = "outgoing";
  std::vector<std::size_t> layers;
  std::string scheme = "lambda2";
  bool teleport = false;
  std::string threshold = "mean";
  std::string size;
  std::string heatmap = "pgm";
  std::string out;
};

std::vector<std::string> image_ids(const std::vector<std::string>& manifests) {
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> seen;
  for (const auto& m : manifests) {
    std::string id = fs::absolute(m).parent_path().filename().string();
    if (id.empty()) id = "image";
    const std::size_t k = seen[id]++;
    ids.push_back(k == 0 ? id : id + "-" + std::to_string(k));
  }
  return ids;
}

ThresholdRule parse_threshold(const std::string& text) {
  if (text == "mean") return ThresholdRule::mean();
  try {
    std::size_t used = 0;
    const double t = std::stod(text, &used);
    if (used == text.size()) return ThresholdRule::fixed(t);
  } catch (const std::logic_error&) {
  }
  usage("--threshold takes 'mean' or a number, got '" + text + "'");
}

int run_segment(const SegmentArgs& a, const Common& c) {
  const auto cfg = c.chain();
  if (!a.gt.empty() && a.gt.size() != a.manifests.size()) {
    usage("give one --gt per manifest (" + std::to_string(a.manifests.size()) + " manifests, " +
          std::to_string(a.gt.size()) + " masks)");
  }
  const auto counts = parse_bounces(a.n);
  if (counts.size() != 1) usage("--n takes a single bounce count here");
  const ThresholdRule rule = parse_threshold(a.threshold);
  const auto size = parse_grid(a.size);
  const auto ids = image_ids(a.manifests);
  const fs::path out(a.out);
  fs::create_directories(out);

  std::string metrics_csv = "image_id,accuracy,miou,ap\n";
  SegMetrics sum;
  for (std::size_t k = 0; k < a.manifests.size(); ++k) {
    const auto [manifest, tensor] = load(a.manifests[k], c.workers());
    std::optional<io::BinaryMask> gt;
    if (!a.gt.empty()) gt = io::read_mask(a.gt[k]);

    MapRequest req;
    if (a.token) {
      req.target = *a.token;
    } else if (!tensor.special_tokens().empty()) {
      req.target = tensor.special_tokens().front();
    } else {
      usage("--token is required when the manifest lists no special tokens");
    }
    req.bounces = counts.front();
    req.direction = parse_direction(a.direction);
    req.scheme = scheme_from(a.scheme);
    req.layers = a.layers;
    req.cfg = cfg;
    req.teleport = a.teleport;
    req.output_size = size ? size : gt ? std::optional<Grid>(gt->size) : std::nullopt;
    req.threshold = rule;
    req.threads = c.workers();
    const SegMap map = attention_to_map(tensor, req);

    const auto format = parse_heatmap(a.heatmap);
    const fs::path scores_path = out / (ids[k] + ".scores" + heatmap_ext(format));
    io::export_heatmap(map.scores, map.size, {}, scores_path, format);
    io::write_mask_pgm(out / (ids[k] + ".mask.pgm"), io::BinaryMask{map.size, map.mask});

    if (gt) {
      const SegMetrics m = evaluate(map, *gt);
      sum.accuracy += m.accuracy;
      sum.miou += m.miou;
      sum.ap += m.ap;
      metrics_csv += ids[k] + "," + io::format_real(m.accuracy) + "," + io::format_real(m.miou) +
                     "," + io::format_real(m.ap) + "\n";
      std::printf("%s accuracy %.4f miou %.4f ap %.4f\n", ids[k].c_str(), m.accuracy, m.miou,
                  m.ap);
    } else {
      std::printf("%s map written (%zux%zu)\n", ids[k].c_str(), map.size.height, map.size.width);
    }
  }
  if (!a.gt.empty()) {
    const double n = static_cast<double>(a.manifests.size());
    metrics_csv += "mean," + io::format_real(sum.accuracy / n) + "," +
                   io::format_real(sum.miou / n) + "," + io::format_real(sum.ap / n) + "\n";
    io::write_text(out / "metrics.csv", metrics_csv);
    std::printf("mean accuracy %.4f miou %.4f ap %.4f\n", sum.accuracy / n, sum.miou / n,
                sum.ap / n);
  }

  Provenance p("segment");
  for (const auto& m : a.manifests) p.input(m);
  for (const auto& g : a.gt) p.input(g);
  p.set("token", a.token ? Json(*a.token) : Json("first special token"));
  p.set("n", a.n);
  p.set("direction", a.direction);
  p.set("layers", a.layers);
  p.set("scheme", a.scheme);
  p.set("teleport", a.teleport);
  p.set("threshold", a.threshold);
  p.set("size", a.size.empty() ? Json("ground truth or token grid") : Json(a.size));
  p.set("heatmap", a.heatmap);
  p.chain(c);
  p.write(out);
  return 0;
}

// -------------------------------------------------------------- mask-order

struct MaskArgs {
  std::string manifest;
  std::vector<std::string> strategies{"token-rank"};
  double layer_fraction = 0.5;
  bool lambda2 = false;
  std::string out;
};

int run_mask_order(const MaskArgs& a, const Common& c) {
  const auto cfg = c.chain();
  const auto [manifest, tensor] = load(a.manifest, c.workers());
  std::vector<std::string> names = a.strategies;
  if (std::find(names.begin(), names.end(), "all") != names.end()) {
    names = {"random", "center-token", "column-sum", "cls-token", "token-rank"};
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  for (const auto& name : names) {
    MaskOrderOptions opts;
    opts.strategy = parse_mask_strategy(name);
    opts.cfg = cfg;
    opts.layer_fraction = a.layer_fraction;
    opts.seed = c.seed;
    opts.lambda2_weighting = a.lambda2;
    opts.threads = c.workers();
    const MaskOrder order = masking_order(tensor, opts);
    std::string csv = "rank,token,score\n";
    for (std::size_t r = 0; r < order.tokens.size(); ++r) {
      const std::size_t t = order.tokens[r];
      csv += std::to_string(r + 1) + "," + std::to_string(t) + "," +
             (order.scores.empty() ? std::string() : io::format_real(order.scores[t])) + "\n";
    }
    io::write_text(out / ("mask_order_" + name + ".csv"), csv);
    std::printf("%-13s first:", name.c_str());
    for (std::size_t r = 0; r < std::min<std::size_t>(5, order.tokens.size()); ++r) {
      std::printf(" %zu", order.tokens[r]);
    }
    std::printf("\n");
  }
  Provenance p("mask-order");
  p.input(a.manifest);
  p.set("strategies", names);
  p.set("layer_fraction", a.layer_fraction);
  p.set("lambda2", a.lambda2);
  p.set("seed", c.seed);
  p.chain(c);
  p.write(out);
  return 0;
}

// ------------------------------------------------------------------- synth

struct SynthArgs {
  std::string kind = "random";
  std::optional<std::size_t> n;
  std::size_t blocks = 2;
  double intra = 0.98;
  double jitter = 0.0;
  std::string grid;
  std::size_t special = 0;
  std::size_t heads = 1;
  std::size_t layers = 1;
  std::string dtype = "f32";
  std::string out;
};

int run_synth(const SynthArgs& a, const Common& c) {
  const auto grid = parse_grid(a.grid);
  std::size_t n = 0;
  if (a.kind == "hub") {
    n = 5;
    if (a.n && *a.n != 5) usage("the hub chain has 5 states");
  } else if (a.n) {
    n = *a.n;
  } else if (grid) {
    n = grid->cells() + a.special;
  } else {
    n = 64;
  }
  if (grid && grid->cells() + a.special != n) {
    usage("grid " + a.grid + " plus " + std::to_string(a.special) + " special tokens != " +
          std::to_string(n) + " states");
  }
  if (a.special > n) usage("more special tokens than states");
  if (n == 0 || a.heads == 0 || a.layers == 0) usage("--n, --heads and --layers must be positive");
  if (a.kind == "block" && (a.blocks == 0 || a.blocks > n)) usage("--blocks must lie in [1, n]");
  const io::Dtype dtype = io::parse_dtype(a.dtype);

  const fs::path out(a.out);
  fs::create_directories(out);
  io::Manifest manifest;
  manifest.seq_len = n;
  manifest.grid = grid;
  for (std::size_t t = 0; t < a.special; ++t) manifest.special_tokens.push_back(t);
  for (std::size_t l = 0; l < a.layers; ++l) {
    io::NdArray array{{a.heads, n, n}, {}, dtype};
    array.data.reserve(a.heads * n * n);
    for (std::size_t h = 0; h < a.heads; ++h) {
      const std::uint64_t seed = c.seed + l * a.heads + h;
      const StochasticMatrix m = a.kind == "block" ? synth::block_chain(n, a.blocks, a.intra,
                                                                       a.jitter, seed)
                                 : a.kind == "hub" ? synth::hub_chain()
                                                    : synth::random_chain(n, seed);
      array.data.insert(array.data.end(), m.entries().begin(), m.entries().end());
    }
    char name[32];
    std::snprintf(name, sizeof name, "layer_%03zu.npy", l);
    io::save_array(out / name, array, dtype);
    manifest.entries.push_back({l, a.heads, dtype, name, {a.heads, n, n}});
  }
  io::save_manifest(out / "manifest.json", manifest);

  if (a.kind == "block" && grid) {
    const auto labels = synth::block_labels(n, a.blocks);
    io::BinaryMask gt{*grid, {}};
    for (std::size_t t = a.special; t < n; ++t) gt.values.push_back(labels[t] == 0 ? 1 : 0);
    io::write_mask_pgm(out / "gt.pgm", gt);
  }

  Provenance p("synth");
  p.set("kind", a.kind);
  p.set("n", n);
  p.set("blocks", a.blocks);
  p.set("intra", a.intra);
  p.set("jitter", a.jitter);
  p.set("grid", a.grid);
  p.set("special", a.special);
  p.set("heads", a.heads);
  p.set("layers", a.layers);
  p.set("dtype", a.dtype);
  p.set("seed", c.seed);
  p.write(out);
  std::printf("wrote %zu layer(s) x %zu head(s), %zu states, to %s\n", a.layers, a.heads, n,
              a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention maps as Markov chains: TokenRank, multi-bounce attention, "
               "lambda2 head weighting and zero-shot segmentation."};
  app.name("attnchain");
  app.set_version_flag("--version", ATTNCHAIN_VERSION);
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  Common common;

  ValidateArgs validate;
  auto* cmd_validate = app.add_subcommand("validate", "check every matrix in a manifest");
  cmd_validate->add_option("manifest", validate.manifest, "manifest.json")->required();
  cmd_validate->add_option("--tolerance", validate.tolerance, "allowed |row sum - 1|");
  add_threads_flag(cmd_validate, common);

  SelectArgs rank;
  auto* cmd_rank = app.add_subcommand("tokenrank", "stationary vector of an attention chain");
  add_select_flags(cmd_rank, rank);
  add_chain_flags(cmd_rank, common);
  add_threads_flag(cmd_rank, common);

  SelectOpArgs sel;
  auto* cmd_select = app.add_subcommand("select", "one row, one column or the column sums");
  add_select_flags(cmd_select, sel.select);
  cmd_select->remove_option(cmd_select->get_option("--direction"));
  cmd_select->add_option("--row", sel.row, "row i: where token i attends");
  cmd_select->add_option("--column", sel.column, "column j, normalized: who attends to token j");
  cmd_select->add_flag("--column-sum", sel.column_sum, "column sums divided by n");
  add_threads_flag(cmd_select, common);

  BounceArgs bounce_args;
  auto* cmd_bounce = app.add_subcommand("bounce", "multi-bounce attention from one token");
  add_select_flags(cmd_bounce, bounce_args.select);
  cmd_bounce->add_option("--token", bounce_args.token, "start token")->required();
  cmd_bounce->add_option("--n", bounce_args.n, "comma list of bounce counts; inf = tokenrank");
  cmd_bounce->add_flag("--teleport", bounce_args.teleport,
                       "bounce on the teleport-adjusted chain");
  add_chain_flags(cmd_bounce, common);
  add_threads_flag(cmd_bounce, common);

  Lambda2Args l2;
  auto* cmd_l2 = app.add_subcommand("lambda2", "second-eigenvalue modulus per head");
  cmd_l2->add_option("manifest", l2.manifest, "manifest.json")->required();
  cmd_l2->add_option("--layer", l2.layer, "layer id (default: every layer)");
  cmd_l2->add_option("--method", l2.method)->check(CLI::IsMember({"auto", "dense", "deflated"}));
  cmd_l2->add_flag("--adjusted", l2.adjusted, "use the teleport-adjusted chain");
  cmd_l2->add_option("--alpha", common.alpha, "teleport damping for --adjusted");
  cmd_l2->add_option("--out", l2.out, "also write lambda2.csv here");
  add_threads_flag(cmd_l2, common);

  SegmentArgs seg;
  auto* cmd_seg = app.add_subcommand("segment", "zero-shot segmentation maps and metrics");
  cmd_seg->add_option("manifests", seg.manifests, "one manifest.json per image")->required();
  cmd_seg->add_option("--gt", seg.gt, "ground-truth mask (.pgm or .csv) per manifest");
  cmd_seg->add_option("--token", seg.token, "target token (default: first special token)");
  cmd_seg->add_option("--n", seg.n, "bounce count, or inf for tokenrank");
  cmd_seg->add_option("--direction", seg.direction)
      ->check(CLI::IsMember({"incoming", "outgoing"}));
  cmd_seg->add_option("--layers", seg.layers, "layer ids to average (default: all)")
      ->delimiter(',');
  cmd_seg->add_option("--scheme", seg.scheme, "head weighting")
      ->check(CLI::IsMember({"uniform", "lambda2"}));
  cmd_seg->add_flag("--teleport", seg.teleport, "bounce on the teleport-adjusted chain");
  cmd_seg->add_option("--threshold", seg.threshold, "'mean' or a fixed score");
  cmd_seg->add_option("--size", seg.size, "output HxW (default: ground truth, else token grid)");
  cmd_seg->add_option("--heatmap", seg.heatmap)->check(CLI::IsMember({"pgm", "csv"}));
  cmd_seg->add_option("--out", seg.out, "output directory")->required();
  add_chain_flags(cmd_seg, common);
  add_threads_flag(cmd_seg, common);

  MaskArgs mask;
  auto* cmd_mask = app.add_subcommand("mask-order", "token masking order per strategy");
  cmd_mask->add_option("manifest", mask.manifest, "manifest.json")->required();
  cmd_mask->add_option("--strategy", mask.strategies, "strategies, or all")
      ->delimiter(',')
      ->check(CLI::IsMember(
          {"random", "center-token", "column-sum", "cls-token", "token-rank", "all"}));
  cmd_mask->add_option("--layer-fraction", mask.layer_fraction, "leading share of layers used");
  cmd_mask->add_flag("--lambda2", mask.lambda2, "weight heads by lambda2 instead of uniformly");
  cmd_mask->add_option("--seed", common.seed, "seed for the random strategy");
  cmd_mask->add_option("--out", mask.out, "output directory")->required();
  add_chain_flags(cmd_mask, common);
  add_threads_flag(cmd_mask, common);

  SynthArgs syn;
  auto* cmd_synth = app.add_subcommand("synth", "write a synthetic manifest");
  cmd_synth->add_option("--kind", syn.kind)->check(CLI::IsMember({"random", "block", "hub"}));
  cmd_synth->add_option("--n", syn.n, "states (default: grid cells + special, else 64)");
  cmd_synth->add_option("--blocks", syn.blocks, "block count for --kind block");
  cmd_synth->add_option("--intra", syn.intra, "mass kept inside a block");
  cmd_synth->add_option("--jitter", syn.jitter, "relative weight noise in [0, 1)");
  cmd_synth->add_option("--grid", syn.grid, "HxW token grid");
  cmd_synth->add_option("--special", syn.special, "leading special tokens");
  cmd_synth->add_option("--heads", syn.heads);
  cmd_synth->add_option("--layers", syn.layers);
  cmd_synth->add_option("--dtype", syn.dtype)->check(CLI::IsMember({"f32", "f64"}));
  cmd_synth->add_option("--seed", common.seed);
  cmd_synth->add_option("--out", syn.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*cmd_validate) return run_validate(validate, common);
    if (*cmd_rank) return run_tokenrank(rank, common);
    if (*cmd_select) return run_select(sel, common);
    if (*cmd_bounce) return run_bounce(bounce_args, common);
    if (*cmd_l2) return run_lambda2(l2, common);
    if (*cmd_seg) return run_segment(seg, common);
    if (*cmd_mask) return run_mask_order(mask, common);
    if (*cmd_synth) return run_synth(syn, common);
  } catch (const Error& e) {
    std::fprintf(stderr, "attnchain: %s\n", e.what());
    return is_usage_error(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "attnchain: %s\n", e.what());
    return 1;
  }
  return 2;
}
