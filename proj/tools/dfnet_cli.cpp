#include <CLI11.hpp>

#include <dfnet/config.hpp>
#include <dfnet/dataset.hpp>
#include <dfnet/infer.hpp>
#include <dfnet/metrics.hpp>
#include <dfnet/model.hpp>
#include <dfnet/png_io.hpp>
#include <dfnet/synthetic.hpp>
#include <dfnet/trainer.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace dfnet;

namespace {

int cmd_gen_data(const std::string& kind, int count, int size, std::uint64_t seed,
                 const std::string& out_dir) {
  auto groups = gen_synthetic(parse_synth_kind(kind), count, size, seed);
  write_dataset(groups, out_dir);
  std::size_t frames = 0;
  for (const auto& g : groups) frames += g.frames.size();
  std::printf("wrote %zu groups (%zu frames) to %s\n", groups.size(), frames, out_dir.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt, const std::string& init_ckpt,
              std::string trace_path) {
  const RunConfig rc = load_run_config(config_path);
  const Dataset ds = load_dataset(data_dir);

  auto model = DfnetModel<float>::init(ModelConfig::from_run_config(rc));
  if (!init_ckpt.empty()) model.load_weights_from(Checkpoint::load(init_ckpt));

  const TrainConfig tc = TrainConfig::from_run_config(rc);
  const auto trace = train_stage(tc, model, ds);
  model.save(out_ckpt);
  if (trace_path.empty()) trace_path = out_ckpt + ".loss.csv";
  write_loss_trace(trace_path, trace);
  std::printf("trained %zu iterations; checkpoint %s, loss trace %s\n", trace.size(),
              out_ckpt.c_str(), trace_path.c_str());
  if (!trace.empty()) std::printf("final loss %.6f\n", trace.back().loss);
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& frames_dir, const std::string& out_dir,
              const std::vector<double>& scales, bool mirror, int n_in, double threshold,
              bool resize_before_average, const std::string& instance_dir) {
  auto model = DfnetModel<float>::load(ckpt);
  InferConfig cfg;
  if (!scales.empty()) cfg.scales = scales;
  cfg.mirror = mirror;
  cfg.n_in = n_in;
  cfg.threshold = threshold;
  cfg.resize_before_average = resize_before_average;

  const auto names = list_png_names(frames_dir);
  check_value(!names.empty(), frames_dir + " contains no PNG frames");
  std::vector<Tensor<float>> frames;
  for (const auto& name : names)
    frames.push_back(read_png_rgb((fs::path(frames_dir) / (name + ".png")).string()));

  const auto heats = infer_video(frames, model, cfg);

  fs::create_directories(fs::path(out_dir) / "heatmaps");
  fs::create_directories(fs::path(out_dir) / "masks");
  for (std::size_t i = 0; i < names.size(); ++i) {
    write_png_gray16((fs::path(out_dir) / "heatmaps" / (names[i] + ".png")).string(), heats[i]);
    Tensor<float> mask = binarize(heats[i], cfg.threshold);
    if (!instance_dir.empty()) {
      const auto ipath = fs::path(instance_dir) / (names[i] + ".png");
      if (fs::exists(ipath)) mask = instance_prune(mask, read_png_gray(ipath.string()));
    }
    write_png_gray8((fs::path(out_dir) / "masks" / (names[i] + ".png")).string(), mask);
  }
  std::printf("wrote %zu heatmaps and masks to %s\n", names.size(), out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& report,
             const std::string& pr_csv, double threshold, double tol) {
  const auto names = list_png_names(pred_dir);
  check_value(!names.empty(), pred_dir + " contains no PNG heatmaps");

  MetricsReport agg;
  std::vector<std::pair<double, double>> pr_sum(255, {0.0, 0.0});
  int count = 0;
  for (const auto& name : names) {
    const auto gt_path = fs::path(gt_dir) / (name + ".png");
    if (!fs::exists(gt_path)) throw IoError("no ground truth for frame " + name);
    auto heat = read_png_gray((fs::path(pred_dir) / (name + ".png")).string());
    auto gt = binarize(read_png_gray(gt_path.string()), 0.5);
    const auto pred = binarize(heat, threshold);
    const double frame_tol = tol >= 0 ? tol : default_boundary_tol(gt.dim(0), gt.dim(1));

    agg.j_mean += iou_j(pred, gt);
    agg.boundary_f += boundary_f(pred, gt, frame_tol);
    agg.mae += mae(heat, gt);
    auto [mf, curve] = max_fmeasure(heat, gt);
    agg.max_f += mf;
    for (std::size_t i = 0; i < curve.size(); ++i) {
      pr_sum[i].first += curve[i].first;
      pr_sum[i].second += curve[i].second;
    }
    ++count;
  }
  agg.j_mean /= count;
  agg.boundary_f /= count;
  agg.mae /= count;
  agg.max_f /= count;
  for (auto& [p, r] : pr_sum) {
    p /= count;
    r /= count;
  }
  agg.pr_curve = pr_sum;

  nlohmann::json j{{"frames", count},
                   {"j_mean", agg.j_mean},
                   {"boundary_f", agg.boundary_f},
                   {"mae", agg.mae},
                   {"max_f", agg.max_f}};
  std::ofstream os(report);
  if (!os) throw IoError("cannot open " + report + " for writing");
  os << j.dump(2) << "\n";

  if (!pr_csv.empty()) {
    std::ofstream curve_os(pr_csv);
    if (!curve_os) throw IoError("cannot open " + pr_csv + " for writing");
    curve_os << "threshold,precision,recall\n";
    curve_os.precision(8);
    for (std::size_t i = 0; i < agg.pr_curve.size(); ++i)
      curve_os << (static_cast<double>(i + 1) / 256.0) << "," << agg.pr_curve[i].first << ","
               << agg.pr_curve[i].second << "\n";
  }
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dfnet: group-aware video object segmentation at desk scale"};
  app.require_subcommand(1);

  // gen-data
  std::string kind = "moving_blobs", out_dir;
  int count = 10, size = 64;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--kind", kind, "static_blobs | moving_blobs | coseg_groups");
  gen->add_option("--count", count, "groups (videos/classes) or images for static_blobs");
  gen->add_option("--size", size, "square image side, multiple of 8, >= 32");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--out", out_dir, "output dataset root")->required();

  // train
  std::string config_path, data_dir, out_ckpt, init_ckpt, trace_path;
  auto* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--data", data_dir, "dataset root")->required();
  train->add_option("--out", out_ckpt, "output checkpoint path")->required();
  train->add_option("--init", init_ckpt, "warm-start checkpoint (e.g. the stage-1 result)");
  train->add_option("--trace", trace_path, "loss trace CSV (default <out>.loss.csv)");

  // infer
  std::string ckpt, frames_dir, infer_out, instance_dir;
  std::vector<double> scales;
  bool mirror = true, resize_before_average = true;
  int n_in = 4;
  double threshold = 0.5;
  auto* infer = app.add_subcommand("infer", "segment a directory of frames");
  infer->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  infer->add_option("--frames", frames_dir, "directory of input PNG frames")->required();
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_option("--scales", scales, "inference scales (default 0.75 1.0 1.25)");
  infer->add_flag("--mirror,!--no-mirror", mirror, "mirrored averaging (default on)");
  infer->add_option("--n-in", n_in, "frames per inference group");
  infer->add_option("--threshold", threshold, "binarization threshold");
  infer->add_flag("--resize-before-average,!--average-before-resize", resize_before_average,
                  "average heatmaps after resizing to native resolution (default)");
  infer->add_option("--instance-dir", instance_dir,
                    "optional instance-label PNGs for instance pruning");

  // eval
  std::string pred_dir, gt_dir, report = "report.json", pr_csv;
  double eval_threshold = 0.5, tol = -1.0;
  auto* eval = app.add_subcommand("eval", "score heatmaps against ground-truth masks");
  eval->add_option("--pred", pred_dir, "directory of 16-bit heatmap PNGs")->required();
  eval->add_option("--gt", gt_dir, "directory of ground-truth mask PNGs")->required();
  eval->add_option("--report", report, "output JSON report path");
  eval->add_option("--pr-csv", pr_csv, "output PR-curve CSV path");
  eval->add_option("--threshold", eval_threshold, "binarization threshold for J and F");
  eval->add_option("--tol", tol, "boundary tolerance in pixels (default 0.8% of diagonal)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(kind, count, size, seed, out_dir);
    if (train->parsed()) return cmd_train(config_path, data_dir, out_ckpt, init_ckpt, trace_path);
    if (infer->parsed())
      return cmd_infer(ckpt, frames_dir, infer_out, scales, mirror, n_in, threshold,
                       resize_before_average, instance_dir);
    if (eval->parsed()) return cmd_eval(pred_dir, gt_dir, report, pr_csv, eval_threshold, tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
