// adatok: object-level visual token compression toolkit.
//
// Subcommands: merge, table5, cost, bandwidth, compare, send, serve, fixtures.
// Exit codes: 0 success, 2 usage, 3 format, 4 transport, 5 empty result.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adatok/adatok.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace adatok;

namespace {

std::string fmt_g(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

std::pair<std::size_t, std::size_t> parse_dims(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw InvalidArgument("expected HxW, got '" + text + "'");
  try {
    std::size_t used = 0;
    const auto h = std::stoul(text.substr(0, x), &used);
    if (used != x) throw InvalidArgument("bad dims '" + text + "'");
    const auto w = std::stoul(text.substr(x + 1), &used);
    if (used != text.size() - x - 1) throw InvalidArgument("bad dims '" + text + "'");
    return {h, w};
  } catch (const std::logic_error&) {
    throw InvalidArgument("bad dims '" + text + "'");
  }
}

// ---------------------------------------------------------------- merge

struct MergeArgs {
  std::string features;
  std::string masks;
  std::string scores;
  std::size_t points_per_side = 32;
  double sigma = 0.8;
  double iou = 0.9;
  std::string upsample = "nearest";
  bool residual = false;
  std::string out;
  std::string dtype = "f16";
};

int cmd_merge(const MergeArgs& a) {
  const Dtype dtype = parse_dtype(a.dtype);
  if (dtype == Dtype::u8) throw InvalidArgument("--dtype must be f16 or f32");
  MergeOptions opts;
  opts.mode = parse_upsample_mode(a.upsample);
  opts.residual_token = a.residual;
  opts.threads = detail::threads_from_env();

  const FeatureGrid fg = feature_grid_from_tensor(read_tensor(a.features));
  const MaskSet candidates = mask_set_from_tensor(read_tensor(a.masks), read_sidecar(a.scores));
  const GridPromptConfig cfg{a.points_per_side, a.sigma, a.iou};
  const MaskSet kept = run_mask_pipeline(candidates, cfg);
  if (kept.empty())
    throw NoMasksSurvived("no mask survived selection (p=" + std::to_string(a.points_per_side) +
                          ", sigma=" + format_real(a.sigma) + ")");

  const CompressedTokenSet cts =
      opts.mode == UpsampleMode::nearest ? merge_fast(fg, kept, opts) : merge(fg, kept, opts);
  const FrameBytes frame = pack(cts, dtype);
  write_tok(frame, a.out);

  const double r = compression_ratio(cts);
  const std::uint64_t payload = cts.count() * cts.dim * dtype_size(dtype);
  nlohmann::ordered_json manifest;
  manifest["command"] = "merge";
  manifest["features"] = a.features;
  manifest["masks"] = a.masks;
  manifest["scores"] = a.scores;
  manifest["points_per_side"] = a.points_per_side;
  manifest["sigma"] = a.sigma;
  manifest["iou"] = a.iou;
  manifest["upsample"] = a.upsample;
  manifest["residual"] = a.residual;
  manifest["dtype"] = a.dtype;
  manifest["out"] = a.out;
  manifest["tokens"] = cts.count();
  manifest["ratio"] = r;
  manifest["payload_bytes"] = payload;
  detail::write_text(a.out + ".manifest.json", manifest.dump(2) + "\n");

  std::cout << "k=" << cts.count() << " r=" << fmt_g(r) << " bytes=" << payload << "\n";
  return 0;
}

// ---------------------------------------------------------------- table5

std::string pad(const std::string& s, std::size_t width) {
  std::size_t shown = 0;
  for (unsigned char c : s) shown += (c & 0xC0) != 0x80;  // count UTF-8 code points
  return s + std::string(width > shown ? width - shown : 0, ' ');
}

int cmd_table5(bool csv) {
  const auto rows = bandwidth_table();
  std::vector<BandwidthRow> images;
  std::vector<BandwidthRow> tokens;
  for (const auto& r : rows) (r.kind == BandwidthRow::Kind::image ? images : tokens).push_back(r);

  if (csv) {
    std::cout << "kind,size,payload_bytes,bandwidth,unit\n";
    for (const auto& r : rows)
      std::cout << (r.kind == BandwidthRow::Kind::image ? "image" : "tokens") << ',' << r.size
                << ',' << r.entry.payload_bytes << ',' << r.entry.display_text << ','
                << unit_name(r.entry.display_unit) << '\n';
    return 0;
  }
  std::cout << pad("Resolution", 12) << pad("Bandwidth", 11) << pad("Unit", 6) << pad("Tokens", 8)
            << pad("Bandwidth", 11) << "Unit\n";
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::cout << pad(images[i].label, 12) << pad(images[i].entry.display_text, 11)
              << pad(std::string(unit_name(images[i].entry.display_unit)), 6)
              << pad(tokens[i].label, 8) << pad(tokens[i].entry.display_text, 11)
              << unit_name(tokens[i].entry.display_unit) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------- cost

struct CostArgs {
  std::uint64_t layers = 32;
  std::uint64_t at = 1;
  std::optional<double> ratio;
  std::optional<std::uint64_t> tokens;
  std::string grid = "24x24";
  std::optional<std::uint64_t> pre_tokens;
  std::optional<double> flops_per_pair;
  bool csv = false;
};

int cmd_cost(const CostArgs& a) {
  const auto [gh, gw] = parse_dims(a.grid);
  if (gh == 0 || gw == 0) throw InvalidArgument("grid dims must be positive");
  double r = 1.0;
  if (a.ratio && a.tokens) throw InvalidArgument("give either --ratio or --tokens, not both");
  if (a.ratio) r = *a.ratio;
  if (a.tokens) r = static_cast<double>(*a.tokens) / static_cast<double>(gh * gw);
  DecoderConfig cfg{a.layers, a.at, a.pre_tokens.value_or(gh * gw)};
  const CostReport rep = compute_cost(cfg, r, a.flops_per_pair);

  if (a.csv) {
    std::cout << "layers,at,pre_tokens,ratio,cost_uncompressed,cost_compressed,benefit";
    if (rep.flops_compressed_estimate) std::cout << ",flops_uncompressed_estimate,flops_compressed_estimate";
    std::cout << '\n'
              << cfg.num_layers << ',' << cfg.compress_at_layer << ',' << cfg.pre_tokens << ','
              << fmt_g(rep.ratio, 9) << ',' << fmt_g(rep.cost_uncompressed, 9) << ','
              << fmt_g(rep.cost_compressed, 9) << ',' << fmt_g(rep.benefit, 9);
    if (rep.flops_compressed_estimate)
      std::cout << ',' << fmt_g(*rep.flops_uncompressed_estimate, 9) << ','
                << fmt_g(*rep.flops_compressed_estimate, 9);
    std::cout << '\n';
    return 0;
  }
  std::cout << "layers             " << cfg.num_layers << '\n'
            << "compress at layer  " << cfg.compress_at_layer << '\n'
            << "pre tokens         " << cfg.pre_tokens << '\n'
            << "ratio r            " << fmt_g(rep.ratio) << '\n'
            << "cost uncompressed  " << fmt_g(rep.cost_uncompressed) << " x |X1|^2\n"
            << "cost compressed    " << fmt_g(rep.cost_compressed) << " x |X1|^2\n"
            << "benefit            " << fmt_g(rep.benefit) << " x |X1|^2\n";
  if (rep.flops_compressed_estimate)
    std::cout << "flops uncompressed " << fmt_g(*rep.flops_uncompressed_estimate) << " (estimate)\n"
              << "flops compressed   " << fmt_g(*rep.flops_compressed_estimate) << " (estimate)\n";
  return 0;
}

// ---------------------------------------------------------------- bandwidth

struct BandwidthArgs {
  std::string image = "640x480";
  std::uint64_t tokens = 59;
  std::uint64_t dim = 1024;
  std::string dtype = "f16";
  bool csv = false;
};

int cmd_bandwidth(const BandwidthArgs& a) {
  const auto [h, w] = parse_dims(a.image);
  const Dtype dtype = parse_dtype(a.dtype);
  const auto img = image_bytes(h, w);
  const auto tok = token_bytes(a.tokens, a.dim, dtype);
  const double factor = reduction_factor(h, w, a.tokens, a.dim, dtype);
  const auto ie = bandwidth_entry(img);
  const auto te = bandwidth_entry(tok);
  if (a.csv) {
    std::cout << "image,image_bytes,image_bandwidth,tokens,dim,dtype,token_bytes,token_bandwidth,reduction\n"
              << h << 'x' << w << ',' << img << ',' << ie.display() << ',' << a.tokens << ','
              << a.dim << ',' << dtype_name(dtype) << ',' << tok << ',' << te.display() << ','
              << fmt_g(factor, 9) << '\n';
    return 0;
  }
  std::cout << "image " << h << 'x' << w << " uint8 RGB   " << img << " bytes  (" << ie.display() << ")\n"
            << "tokens " << a.tokens << 'x' << a.dim << ' ' << dtype_name(dtype) << "  " << tok
            << " bytes  (" << te.display() << ")\n"
            << "reduction           " << fmt_g(factor, 4) << "x\n";
  return 0;
}

// ---------------------------------------------------------------- compare

struct CompareArgs {
  std::string fixtures;
  std::vector<std::size_t> budgets;
  std::size_t points_per_side = 32;
  double sigma = 0.8;
  double iou = 0.9;
  bool dropped_global_mean = false;
};

int cmd_compare(const CompareArgs& a) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(a.fixtures)) {
    const std::string f = e.path().filename().string();
    const std::string suffix = ".features.atsr";
    if (f.size() > suffix.size() && f.ends_with(suffix)) names.insert(f.substr(0, f.size() - suffix.size()));
  }
  if (names.empty()) throw IoError("no *.features.atsr fixtures in " + a.fixtures);
  const DroppedTarget dropped = a.dropped_global_mean ? DroppedTarget::global_mean : DroppedTarget::zero;

  std::cout << "fixture,strategy,budget,tokens,retention_error,ratio\n";
  for (const auto& name : names) {
    const auto p = fixtures::paths_for(a.fixtures, name);
    const FeatureGrid fg = fixtures::load_features_with_priors(p.features, p.cls, p.attention);
    const double patches = static_cast<double>(fg.patch_count());
    const auto row = [&](std::string_view strategy, const std::string& budget, const StrategyResult& res) {
      std::cout << name << ',' << strategy << ',' << budget << ',' << res.tokens.count() << ','
                << fmt_g(retention_error(fg, res.tokens, res.assignment, dropped), 9) << ','
                << fmt_g(static_cast<double>(res.tokens.count()) / patches) << '\n';
    };

    std::set<std::size_t> budgets(a.budgets.begin(), a.budgets.end());
    if (fs::exists(p.masks)) {
      const MaskSet kept = run_mask_pipeline(mask_set_from_tensor(read_tensor(p.masks), read_sidecar(p.scores)),
                                             {a.points_per_side, a.sigma, a.iou});
      if (kept.empty()) {
        std::cerr << "warning: " << name << ": no masks survived, object_merge skipped\n";
      } else {
        const auto res = object_merge_strategy(fg, kept);
        row(strategy_name(Strategy::object_merge), "adaptive", res);
        budgets.insert(res.tokens.count());
      }
    } else {
      std::cerr << "warning: " << name << ": no masks, object_merge skipped\n";
    }

    std::set<std::size_t> clamped;
    for (std::size_t b : budgets) {
      if (b == 0) {
        std::cerr << "warning: " << name << ": budget 0 ignored\n";
        continue;
      }
      if (b > fg.patch_count()) {
        std::cerr << "warning: " << name << ": budget " << b << " clamped to " << fg.patch_count() << "\n";
        b = fg.patch_count();
      }
      clamped.insert(b);
    }
    for (std::size_t b : clamped) {
      const std::string bs = std::to_string(b);
      if (fg.attention_scores)
        row(strategy_name(Strategy::topk_drop), bs, topk_drop(fg, b));
      else
        std::cerr << "warning: " << name << ": no attention scores, topk_drop skipped\n";
      const auto shape = grid_pool_shape_for_budget(fg, b);
      row(strategy_name(Strategy::grid_pool), bs, grid_pool(fg, shape.height, shape.width));
      if (fg.cls_vector)
        row(strategy_name(Strategy::cls_merge), bs, cls_merge(fg, b));
      else
        std::cerr << "warning: " << name << ": no CLS vector, cls_merge skipped\n";
    }
  }
  return 0;
}

// ---------------------------------------------------------------- send / serve

struct SendArgs {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string file;
  std::optional<double> throttle_kbps;
  double ack_timeout_s = 10.0;
};

int cmd_send(const SendArgs& a) {
  const auto frame = detail::read_file(a.file);
  (void)unpack(frame);
  SendOptions opts;
  opts.throttle_kbps = a.throttle_kbps;
  opts.ack_timeout = std::chrono::milliseconds(static_cast<long long>(a.ack_timeout_s * 1000));
  const SendReport rep = send_frame(a.host, a.port, frame, opts);
  std::cout << "sent frame_bytes=" << rep.frame_bytes << " wire_bytes=" << rep.wire_bytes << " ack=ok\n";
  std::cerr << "elapsed=" << fmt_g(rep.seconds, 4) << "s throughput=" << fmt_g(rep.throughput_kbps, 4)
            << " KB/s\n";
  return 0;
}

std::atomic<TokenServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (TokenServer* s = g_server.load()) s->stop();
}

struct ServeArgs {
  std::uint16_t port = 0;
  std::string out;
  bool persistent = false;
  std::size_t max_frames = 0;
};

int cmd_serve(const ServeArgs& a) {
  ServerOptions opts;
  opts.port = a.port;
  opts.sink = a.out;
  opts.persistent = a.persistent;
  opts.max_frames = a.max_frames;
  TokenServer server(opts);
  g_server.store(&server);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening port=" << server.port() << std::endl;
  server.run();
  g_server.store(nullptr);
  std::cout << "accepted=" << server.frames_accepted() << " rejected=" << server.frames_rejected()
            << " files=" << server.files_written() << std::endl;
  return 0;
}

// ---------------------------------------------------------------- fixtures

int cmd_fixtures(const std::string& out) {
  for (const auto& f : fixtures::standard_set()) {
    fixtures::write_fixture(f, out);
    std::cout << f.name << " objects=" << f.expected_objects << " candidates=" << f.candidates.size() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adatok - object-level visual token compression toolkit"};
  app.require_subcommand(1);

  MergeArgs merge_args;
  auto* merge_cmd = app.add_subcommand("merge", "merge patch features into one token per object mask");
  merge_cmd->add_option("--features", merge_args.features, "ATSR feature grid (H, W, C)")->required();
  merge_cmd->add_option("--masks", merge_args.masks, "ATSR u8 mask stack (N, H, W)")->required();
  merge_cmd->add_option("--scores", merge_args.scores, "score sidecar")->required();
  merge_cmd->add_option("-p,--points-per-side", merge_args.points_per_side, "grid prompt points per side")
      ->capture_default_str()->check(CLI::PositiveNumber);
  merge_cmd->add_option("--sigma", merge_args.sigma, "confidence threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  merge_cmd->add_option("--iou", merge_args.iou, "dedup IoU threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  merge_cmd->add_option("--upsample", merge_args.upsample, "nearest | bilinear")->capture_default_str()
      ->check(CLI::IsMember({"nearest", "bilinear"}));
  merge_cmd->add_flag("--residual", merge_args.residual, "emit one token for uncovered pixels");
  merge_cmd->add_option("-o,--out", merge_args.out, "output TOK file")->required();
  merge_cmd->add_option("--dtype", merge_args.dtype, "f16 | f32")->capture_default_str()->check(CLI::IsMember({"f16", "f32"}));

  bool table_csv = false;
  auto* table_cmd = app.add_subcommand("table5", "raw image vs token bandwidth table");
  table_cmd->add_flag("--csv", table_csv);

  CostArgs cost_args;
  auto* cost_cmd = app.add_subcommand("cost", "prefill cost and compression benefit");
  cost_cmd->add_option("--layers", cost_args.layers, "decoder layers L")->capture_default_str();
  cost_cmd->add_option("--at", cost_args.at, "layer k where compression applies")->capture_default_str();
  cost_cmd->add_option("--ratio", cost_args.ratio, "compression ratio r in (0, 1]");
  cost_cmd->add_option("--tokens", cost_args.tokens, "compressed token count (r = tokens / grid)");
  cost_cmd->add_option("--grid", cost_args.grid, "patch grid HxW")->capture_default_str();
  cost_cmd->add_option("--pre-tokens", cost_args.pre_tokens, "|X1| (defaults to grid size)");
  cost_cmd->add_option("--flops-per-pair", cost_args.flops_per_pair, "constant for a FLOP estimate");
  cost_cmd->add_flag("--csv", cost_args.csv);

  BandwidthArgs bw_args;
  auto* bw_cmd = app.add_subcommand("bandwidth", "bytes for one raw frame vs one token set");
  bw_cmd->add_option("--image", bw_args.image, "image HxW")->capture_default_str();
  bw_cmd->add_option("--tokens", bw_args.tokens, "token count")->capture_default_str();
  bw_cmd->add_option("--dim", bw_args.dim, "token dim")->capture_default_str();
  bw_cmd->add_option("--dtype", bw_args.dtype, "f16 | f32")->capture_default_str()->check(CLI::IsMember({"f16", "f32"}));
  bw_cmd->add_flag("--csv", bw_args.csv);

  CompareArgs cmp_args;
  auto* cmp_cmd = app.add_subcommand("compare", "retention error of object merging vs patch baselines (CSV)");
  cmp_cmd->add_option("--fixtures", cmp_args.fixtures, "fixture directory")->required()->check(CLI::ExistingDirectory);
  cmp_cmd->add_option("--budgets", cmp_args.budgets, "extra token budgets")->delimiter(',');
  cmp_cmd->add_option("-p,--points-per-side", cmp_args.points_per_side)->capture_default_str()->check(CLI::PositiveNumber);
  cmp_cmd->add_option("--sigma", cmp_args.sigma)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  cmp_cmd->add_option("--iou", cmp_args.iou)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  cmp_cmd->add_flag("--dropped-global-mean", cmp_args.dropped_global_mean,
                    "score dropped patches against the global mean instead of zero");

  SendArgs send_args;
  auto* send_cmd = app.add_subcommand("send", "send a TOK file to a server");
  send_cmd->add_option("--host", send_args.host)->capture_default_str();
  send_cmd->add_option("--port", send_args.port)->required();
  send_cmd->add_option("file", send_args.file, "TOK file")->required()->check(CLI::ExistingFile);
  send_cmd->add_option("--throttle-kbps", send_args.throttle_kbps, "pace the upload (KB = 1024 bytes)");
  send_cmd->add_option("--ack-timeout", send_args.ack_timeout_s, "seconds")->capture_default_str();

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "receive TOK frames into a directory");
  serve_cmd->add_option("--port", serve_args.port)->required();
  serve_cmd->add_option("--out", serve_args.out, "sink directory")->required();
  serve_cmd->add_flag("--persistent", serve_args.persistent, "accept several frames per connection");
  serve_cmd->add_option("--max-frames", serve_args.max_frames, "exit after N accepted frames");

  std::string fixtures_out;
  auto* fix_cmd = app.add_subcommand("fixtures", "write the synthetic fixture set");
  fix_cmd->add_option("-o,--out", fixtures_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*merge_cmd) return cmd_merge(merge_args);
    if (*table_cmd) return cmd_table5(table_csv);
    if (*cost_cmd) return cmd_cost(cost_args);
    if (*bw_cmd) return cmd_bandwidth(bw_args);
    if (*cmp_cmd) return cmd_compare(cmp_args);
    if (*send_cmd) return cmd_send(send_args);
    if (*serve_cmd) return cmd_serve(serve_args);
    if (*fix_cmd) return cmd_fixtures(fixtures_out);
  } catch (const Error& e) {
    std::cerr << e.name() << ": " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
