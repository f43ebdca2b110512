// decaf: attention fusion, coarse masks, point prompting and evaluation.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 fusion error,
// 3 segmenter error, 4 evaluation error.

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "decaf/attn_dump.hpp"
#include "decaf/coarse_mask.hpp"
#include "decaf/fusion.hpp"
#include "decaf/grounding_map.hpp"
#include "decaf/metrics.hpp"
#include "decaf/png_io.hpp"
#include "decaf/protocol.hpp"
#include "decaf/results_io.hpp"
#include "decaf/rle.hpp"
#include "decaf/synthetic.hpp"
#include "decaf/tracklet.hpp"
#include "decaf/transport.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kFusion = 2, kSegmenter = 3, kEval = 4 };

void init_logging() {
  auto logger = spdlog::stderr_color_mt("decaf");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("DECAF_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only accept an explicit "off".
    if (level != spdlog::level::off || std::string(env) == "off") {
      spdlog::set_level(level);
    } else {
      spdlog::warn("ignoring unknown DECAF_LOG level '{}'", env);
    }
  }
}

struct FuseArgs {
  std::string manifest, out;
  std::optional<int> start_layer;
  double sigma = 1.0;
  bool no_contrastive = false;
  bool no_complementary = false;
  bool no_renormalize = false;
  bool no_head_weighting = false;
  std::string modality = "both";
  unsigned jobs = 1;
};

struct SegmentArgs {
  std::string map, frames_dir, segmenter, out;
  decaf::PromptingConfig prompting;
  double handshake_timeout = 30.0;
  double request_timeout = 300.0;
};

struct EvalArgs {
  std::string pred_dir, gt_dir, out_dir;
  std::string mode = "union";
  unsigned jobs = 1;
};

struct AttnMaskArgs {
  std::string map, out_dir;
  bool per_frame_otsu = false;
};

struct SynthArgs {
  std::string out_dir;
  std::size_t videos = 10;
  std::uint32_t seed = 1234;
};

int run_fuse(const FuseArgs& a) {
  decaf::FusionConfig cfg;
  try {
    cfg.start_layer = a.start_layer;
    cfg.sigma = a.sigma;
    cfg.contrastive = !a.no_contrastive;
    cfg.modality = decaf::parse_fusion_modality(a.modality);
    if (a.no_complementary) {
      if (cfg.modality == decaf::FusionModality::frame)
        throw decaf::ValidationError("--no-complementary conflicts with --modality frame");
      cfg.modality = decaf::FusionModality::video;
    }
    cfg.rollout.renormalize = !a.no_renormalize;
    cfg.rollout.head_weighting = !a.no_head_weighting;
    cfg.jobs = std::max(1u, a.jobs);
    if (!(cfg.sigma >= 0.0)) throw decaf::ValidationError("sigma must be non-negative");
  } catch (const decaf::Error& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  try {
    const auto manifest = decaf::read_manifest(a.manifest);
    spdlog::info("manifest {}: video {} with {} sampled frames", a.manifest, manifest.video_id,
                 manifest.sampled_frame_indices.size());
    const auto result = decaf::build_fused_map(manifest, cfg);
    const auto& s = result.stats;
    spdlog::info("dumps read: {}", s.dumps_read);
    if (s.video_grid_h)
      spdlog::info("video map: grid {}x{}, zero fraction {:.4f}", s.video_grid_h, s.video_grid_w,
                   s.video_zero_fraction);
    if (s.frame_grid_h)
      spdlog::info("fused map: grid {}x{}, zero fraction {:.4f}", s.frame_grid_h, s.frame_grid_w,
                   s.frame_zero_fraction);
    decaf::write_map(result.map, a.out);
    spdlog::info("wrote {}", a.out);
  } catch (const std::exception& e) {
    spdlog::error("fuse: {}", e.what());
    return kFusion;
  }
  return kOk;
}

decaf::OrderedJson segment_config_echo(const SegmentArgs& a) {
  return decaf::OrderedJson{{"map", a.map},
                            {"frames_dir", a.frames_dir},
                            {"segmenter", a.segmenter},
                            {"tau-pq", a.prompting.tau_pq},
                            {"tau-trk", a.prompting.tau_trk},
                            {"nms-iou", a.prompting.nms_iou},
                            {"dedup-iou", a.prompting.dedup_iou},
                            {"handshake-timeout", a.handshake_timeout},
                            {"request-timeout", a.request_timeout}};
}

int run_segment(const SegmentArgs& a) {
  try {
    a.prompting.validate();
  } catch (const decaf::Error& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  decaf::MapFile map;
  try {
    map = decaf::read_map(a.map);
  } catch (const std::exception& e) {
    spdlog::error("segment: {}", e.what());
    return kFusion;
  }
  try {
    if (!fs::is_directory(a.frames_dir))
      throw decaf::SegmenterError("frames_unreadable", "frames directory not found: " + a.frames_dir);
    decaf::ChildProcessTransport transport(a.segmenter);
    decaf::SegmenterSession::Timeouts timeouts;
    timeouts.handshake = std::chrono::milliseconds(static_cast<long>(a.handshake_timeout * 1000));
    timeouts.request = std::chrono::milliseconds(static_cast<long>(a.request_timeout * 1000));
    decaf::SegmenterSession session(transport, timeouts);
    session.start({fs::absolute(a.frames_dir).string(),
                   static_cast<std::size_t>(map.original_frame_count), map.frame_height,
                   map.frame_width});
    spdlog::info("segmenter ready: {} frames of {}x{}", session.meta().num_frames,
                 session.meta().height, session.meta().width);
    const auto result = decaf::run_prompting(map, session, a.prompting);
    for (const auto& w : result.warnings) spdlog::warn("{}: {}", map.video_id, w);
    for (std::size_t i = 0; i < result.candidates.size(); ++i) {
      const auto& c = result.candidates[i];
      spdlog::debug("candidate {} t={} ({:.1f},{:.1f}) attn={:.4f} obj={:.4f} trk={:.4f} {}", i,
                    c.seed.t, c.seed.x, c.seed.y, c.seed.attn, c.s_obj, c.s_trk,
                    decaf::to_string(c.status));
    }
    spdlog::info("{}: {} candidates, {} objects kept", map.video_id, result.candidates.size(),
                 result.objects.size());
    const auto doc = decaf::results_json(map, result, segment_config_echo(a));
    decaf::write_text_file(a.out, decaf::results_text(doc));
  } catch (const decaf::SegmenterError& e) {
    spdlog::error("segmenter [{}]: {}", e.code(), e.what());
    return kSegmenter;
  } catch (const std::exception& e) {
    spdlog::error("segment: {}", e.what());
    return kSegmenter;
  }
  return kOk;
}

int run_eval(const EvalArgs& a) {
  decaf::EvalMode mode;
  if (a.mode == "union") {
    mode = decaf::EvalMode::union_;
  } else if (a.mode == "per-object") {
    mode = decaf::EvalMode::per_object;
  } else {
    spdlog::error("unknown eval mode '{}'", a.mode);
    return kUsage;
  }
  try {
    if (!fs::is_directory(a.gt_dir)) throw decaf::ValidationError("not a directory: " + a.gt_dir);
    if (!fs::is_directory(a.pred_dir)) throw decaf::ValidationError("not a directory: " + a.pred_dir);
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(a.gt_dir))
      if (e.is_directory()) ids.push_back(e.path().filename().string());
    std::ranges::sort(ids);
    if (ids.empty()) throw decaf::ValidationError("no ground-truth videos in " + a.gt_dir);

    std::vector<std::string> missing;
    for (const auto& id : ids)
      if (!fs::exists(fs::path(a.pred_dir) / (id + ".json"))) missing.push_back(id);
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw decaf::ValidationError("missing predictions for: " + list);
    }

    const auto scores = decaf::detail::parallel_map(ids.size(), std::max(1u, a.jobs), [&](std::size_t i) {
      const auto& id = ids[i];
      const auto loaded = decaf::read_results(fs::path(a.pred_dir) / (id + ".json"));
      if (loaded.video_id != id)
        throw decaf::ValidationError(id + ".json holds results for video '" + loaded.video_id + "'");
      const auto gt = decaf::read_png_sequence(fs::path(a.gt_dir) / id);
      return decaf::evaluate_sequence(loaded.prediction, gt, mode);
    });
    std::map<std::string, decaf::SequenceScore> per;
    for (std::size_t i = 0; i < ids.size(); ++i) per[ids[i]] = scores[i];
    const auto report = decaf::aggregate(std::move(per));
    const auto table = decaf::report_table(report);
    std::cout << table;
    if (!a.out_dir.empty()) {
      fs::create_directories(a.out_dir);
      decaf::write_text_file(fs::path(a.out_dir) / "report.json",
                             decaf::results_text(decaf::report_json(report, mode)));
      decaf::write_text_file(fs::path(a.out_dir) / "report.txt", table);
    }
  } catch (const std::exception& e) {
    spdlog::error("eval: {}", e.what());
    return kEval;
  }
  return kOk;
}

int run_attnmask(const AttnMaskArgs& a) {
  try {
    const auto mf = decaf::read_map(a.map);
    const auto scope = a.per_frame_otsu ? decaf::OtsuScope::per_frame : decaf::OtsuScope::global;
    const auto coarse = decaf::attn_mask(mf.map, scope);
    const auto full = decaf::mask_upscale(coarse, mf.map.scale_y, mf.map.scale_x, mf.frame_height,
                                          mf.frame_width);
    fs::create_directories(a.out_dir);
    decaf::OrderedJson doc;
    doc["format_version"] = decaf::kFormatVersion;
    doc["kind"] = "attention_masks";
    doc["video_id"] = mf.video_id;
    doc["otsu"] = a.per_frame_otsu ? "per_frame" : "global";
    doc["sampled_frame_indices"] = mf.sampled_frame_indices;
    decaf::OrderedJson frames = decaf::OrderedJson::array();
    for (std::size_t t = 0; t < full.frames(); ++t) {
      auto img = full.frame_image(t);
      frames.push_back(decaf::rle_to_json(decaf::rle_encode(img)));
      for (auto& v : img.data()) v = v ? 255 : 0;
      decaf::write_png_gray(img, fs::path(a.out_dir) /
                                     decaf::frame_file_name(static_cast<std::size_t>(
                                         mf.sampled_frame_indices.at(t))));
    }
    doc["masks"] = std::move(frames);
    decaf::write_text_file(fs::path(a.out_dir) / "masks.json", decaf::results_text(doc));
    spdlog::info("wrote {} coarse masks to {}", full.frames(), a.out_dir);
  } catch (const std::exception& e) {
    spdlog::error("attnmask: {}", e.what());
    return kFusion;
  }
  return kOk;
}

int run_synth(const SynthArgs& a) {
  try {
    const auto videos = decaf::synth::make_family(a.videos, {}, a.seed);
    for (const auto& v : videos) {
      decaf::synth::write_fixture(v, fs::path(a.out_dir) / v.id);
      spdlog::info("{}: {} regions{}", v.id, v.num_regions, v.sink ? ", sink tokens" : "");
    }
  } catch (const std::exception& e) {
    spdlog::error("synth: {}", e.what());
    return kUsage;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  init_logging();

  CLI::App app{"Training-free referring video segmentation from multimodal attention"};
  app.set_config("--config", "", "Read options from a key=value file ([subcommand] sections)");
  app.require_subcommand(1);

  FuseArgs fa;
  auto* fuse = app.add_subcommand("fuse", "Fuse attention dumps into a grounding map");
  fuse->add_option("manifest", fa.manifest, "Dump manifest")->required();
  fuse->add_option("out", fa.out, "Output map path (.json, with a sibling .bin)")->required();
  fuse->add_option("--start-layer", fa.start_layer, "First rollout layer (default: half depth)");
  fuse->add_option("--sigma", fa.sigma, "Gaussian smoothing sigma in tokens (0 disables)")
      ->capture_default_str();
  fuse->add_flag("--no-contrastive", fa.no_contrastive, "Object map only, no background subtraction");
  fuse->add_flag("--no-complementary", fa.no_complementary, "Video map only, no frame maps");
  fuse->add_option("--modality", fa.modality, "both, video or frame")
      ->check(CLI::IsMember({"both", "video", "frame"}))
      ->capture_default_str();
  fuse->add_flag("--no-renormalize", fa.no_renormalize, "Skip row renormalization after head averaging");
  fuse->add_flag("--no-head-weighting", fa.no_head_weighting, "Average heads uniformly");
  fuse->add_option("--jobs", fa.jobs, "Worker threads for frame dumps")->capture_default_str();

  SegmentArgs sa;
  auto* seg = app.add_subcommand("segment", "Prompt a segmenter from a grounding map");
  seg->add_option("map", sa.map, "Grounding map")->required();
  seg->add_option("frames_dir", sa.frames_dir, "Directory of full-resolution frames")->required();
  seg->add_option("segmenter", sa.segmenter, "Segmenter command line (run via /bin/sh -c)")->required();
  seg->add_option("out", sa.out, "Results JSON path")->required();
  seg->add_option("--tau-pq", sa.prompting.tau_pq, "Point query threshold")->capture_default_str();
  seg->add_option("--tau-trk", sa.prompting.tau_trk, "Tracklet score threshold")->capture_default_str();
  seg->add_option("--nms-iou", sa.prompting.nms_iou, "Tracklet NMS IoU")->capture_default_str();
  seg->add_option("--dedup-iou", sa.prompting.dedup_iou, "Same-frame duplicate IoU")
      ->capture_default_str();
  seg->add_option("--handshake-timeout", sa.handshake_timeout, "Seconds")->capture_default_str();
  seg->add_option("--request-timeout", sa.request_timeout, "Seconds")->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score results against ground-truth masks");
  ev->add_option("pred_dir", ea.pred_dir, "Directory of <video_id>.json results")->required();
  ev->add_option("gt_dir", ea.gt_dir, "Directory of <video_id>/ PNG sequences")->required();
  ev->add_option("--out", ea.out_dir, "Write report.json and report.txt here");
  ev->add_option("--mode", ea.mode, "union or per-object")
      ->check(CLI::IsMember({"union", "per-object"}))
      ->capture_default_str();
  ev->add_option("--jobs", ea.jobs, "Videos scored in parallel")->capture_default_str();

  AttnMaskArgs ma;
  auto* am = app.add_subcommand("attnmask", "Otsu-threshold a grounding map into coarse masks");
  am->add_option("map", ma.map, "Grounding map")->required();
  am->add_option("out_dir", ma.out_dir, "Output directory")->required();
  am->add_flag("--per-frame-otsu", ma.per_frame_otsu, "One threshold per frame");

  SynthArgs ya;
  auto* sy = app.add_subcommand("synth", "Write synthetic label videos and attention dumps");
  sy->add_option("out_dir", ya.out_dir, "Output directory")->required();
  sy->add_option("--videos", ya.videos, "Number of videos")->capture_default_str();
  sy->add_option("--seed", ya.seed, "Generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  if (*fuse) return run_fuse(fa);
  if (*seg) return run_segment(sa);
  if (*ev) return run_eval(ea);
  if (*am) return run_attnmask(ma);
  if (*sy) return run_synth(ya);
  return kUsage;
}
