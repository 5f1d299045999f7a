// Command-line front end: simulate, detect, reconstruct, metrics,
// export-slices. Exit codes: 0 success, 1 input/validation error, 2 runtime
// failure.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "usrecon/usrecon.hpp"

namespace {

using namespace usrecon;

int cmd_simulate(const std::string& phantom_name, const std::string& out_dir, std::uint64_t seed,
                 bool perfect_tracking, bool truth_masks, double speed, double scan_length,
                 double position_jitter, std::vector<double> tilt_jitter,
                 std::optional<std::uint64_t> speckle_seed) {
  sim::RigConfig rig;
  sim::TrajectorySpec traj;
  traj.scan_length_mm = scan_length;
  traj.speed_mm_s = speed;
  traj.position_jitter_mm = position_jitter;
  traj.seed = seed;
  if (tilt_jitter.size() == 1) {
    traj.tilt_jitter_rad = Eigen::Vector3d::Constant(tilt_jitter[0]);
  } else if (tilt_jitter.size() == 3) {
    traj.tilt_jitter_rad = Eigen::Vector3d(tilt_jitter[0], tilt_jitter[1], tilt_jitter[2]);
  } else if (!tilt_jitter.empty()) {
    std::cerr << "--tilt-jitter takes one value or three\n";
    return 1;
  }

  sim::Phantom phantom;
  if (phantom_name == "cyl") {
    phantom = sim::make_cylinder_phantom(rig, traj.scan_length_mm);
  } else if (phantom_name == "box") {
    phantom = sim::make_box_phantom(rig, traj.scan_length_mm);
  } else if (phantom_name == "ellipsoid") {
    phantom = sim::make_ellipsoid_phantom(rig, traj.scan_length_mm);
  } else if (phantom_name == "empty") {
    phantom = sim::Phantom{};
  } else {
    std::cerr << "unknown phantom '" << phantom_name << "' (cyl, box, ellipsoid, empty)\n";
    return 1;
  }

  sim::ScanOptions opt;
  opt.perfect_tracking = perfect_tracking;
  opt.write_truth_masks = truth_masks;
  opt.speckle_seed = speckle_seed;
  const sim::SimTruth truth = sim::simulate_scan(phantom, traj, rig, out_dir, opt);
  std::cout << "wrote " << truth.s_mm.size() << " frames to " << out_dir << "\n";
  return 0;
}

int cmd_detect(const std::string& in_dir, std::optional<int> marker_id) {
  const io::Dataset ds = io::load_dataset(in_dir);
  const tracking::PoseTrack track = pipeline::detect_poses(ds, marker_id);
  io::write_poses_csv(ds.root / "poses.csv", track);
  std::cout << "wrote " << track.samples.size() << " pose samples from "
            << ds.camera_paths.size() << " camera views\n";
  return 0;
}

int cmd_reconstruct(const std::string& in_dir, int workers) {
  const io::Dataset ds = io::load_dataset(in_dir);
  const recon::ReconResult result = recon::reconstruct(ds, workers);
  io::fs::create_directories(ds.out_dir());
  io::write_mhd(result.volume, ds.out_dir() / "volume.mhd");
  std::ofstream report(ds.out_dir() / "report.json");
  report << result.report.to_json().dump(2) << '\n';
  std::cout << "volume " << result.volume.nx << "x" << result.volume.ny << "x" << result.volume.nz
            << ", " << result.report.frames_kept << "/" << result.report.frames_in
            << " frames, scan " << result.report.scan_length_mm << " mm, "
            << result.report.wall_time_ms << " ms\n";
  return 0;
}

int cmd_metrics(const std::string& a_dir, const std::string& b_dir, int workers) {
  const io::Dataset a = io::load_dataset(a_dir);
  const io::Dataset b = io::load_dataset(b_dir);
  const recon::ProcessedRun run_a = recon::process_dataset(a, workers);
  const recon::ProcessedRun run_b = recon::process_dataset(b, workers);
  const std::vector<double> scores = tracking::repeatability_ssim(run_a.frames, run_b.frames);

  nlohmann::json j;
  j["count"] = scores.size();
  j["scores"] = scores;
  j["median"] = tracking::median(scores);
  io::fs::create_directories(a.out_dir());
  std::ofstream out(a.out_dir() / "ssim.json");
  out << j.dump(2) << '\n';
  std::cout << "ssim over " << scores.size() << " frame pairs, median "
            << j["median"].get<double>() << "\n";
  return 0;
}

int cmd_export_slices(const std::string& in_dir, const std::string& plane_name) {
  const recon::MprPlane plane = recon::mpr_plane_from_name(plane_name);
  const io::fs::path root(in_dir);
  const io::fs::path volume_path = root / "out" / "volume.mhd";
  require(io::fs::exists(volume_path), ErrorCode::ValidationFailed,
          volume_path.string() + " not found; run reconstruct first");
  const recon::VolumeGrid v = io::read_mhd(volume_path);
  const io::fs::path dir = root / "out" / ("slices_" + plane_name);
  io::export_slices(v, plane, dir);
  std::cout << "wrote " << recon::mpr_extent(v, plane) << " slices to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Freehand 3D ultrasound reconstruction pipeline", "usrecon"};
  app.require_subcommand(1);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Render a synthetic scan dataset");
  std::string phantom = "cyl";
  std::string out_dir;
  std::uint64_t seed = 1;
  bool perfect_tracking = false;
  bool truth_masks = false;
  double speed = 5.0;
  double scan_length = 91.0;
  double position_jitter = 0.05;
  std::vector<double> tilt_jitter;
  std::optional<std::uint64_t> speckle_seed;
  sim_cmd->add_option("--phantom", phantom, "Phantom: cyl, box, ellipsoid, empty")
      ->capture_default_str();
  sim_cmd->add_option("--out", out_dir, "Output dataset directory")->required();
  sim_cmd->add_option("--seed", seed, "Simulation seed")->capture_default_str();
  sim_cmd->add_flag("--perfect-tracking", perfect_tracking,
                    "Write ground-truth poses instead of marker detections");
  sim_cmd->add_flag("--truth-masks", truth_masks, "Write analytic masks/ for mask ingestion");
  sim_cmd->add_option("--speed", speed, "Probe speed, mm/s")->capture_default_str();
  sim_cmd->add_option("--scan-length", scan_length, "Track length, mm")->capture_default_str();
  sim_cmd->add_option("--position-jitter", position_jitter, "Position jitter sigma, mm")
      ->capture_default_str();
  sim_cmd->add_option("--tilt-jitter", tilt_jitter,
                      "Tilt jitter sigma, rad (one value or three per-axis values)")
      ->expected(1, 3);
  sim_cmd->add_option("--speckle-seed", speckle_seed,
                      "Separate speckle seed (defaults to a stream derived from --seed)");

  // detect
  auto* detect_cmd = app.add_subcommand("detect", "Rebuild poses.csv from camera/ views");
  std::string detect_in;
  std::optional<int> marker_id;
  detect_cmd->add_option("--in", detect_in, "Dataset directory")->required();
  detect_cmd->add_option("--marker-id", marker_id, "Accept only this marker id");

  // reconstruct
  auto* recon_cmd = app.add_subcommand("reconstruct", "Reconstruct a volume from a dataset");
  std::string recon_in;
  int workers = 1;
  recon_cmd->add_option("--in", recon_in, "Dataset directory")->required();
  recon_cmd->add_option("--workers", workers, "Worker threads (output is identical for any count)")
      ->capture_default_str();

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "Per-frame SSIM between two runs");
  std::string a_dir, b_dir;
  int metrics_workers = 1;
  metrics_cmd->add_option("--a", a_dir, "First dataset")->required();
  metrics_cmd->add_option("--b", b_dir, "Second dataset")->required();
  metrics_cmd->add_option("--workers", metrics_workers, "Worker threads")->capture_default_str();

  // export-slices
  auto* export_cmd = app.add_subcommand("export-slices", "Write PNG slices of a volume");
  std::string export_in;
  std::string plane = "transverse";
  export_cmd->add_option("--in", export_in, "Dataset directory (expects out/volume.mhd)")
      ->required();
  export_cmd->add_option("--plane", plane, "Plane: transverse, coronal, sagittal")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad flags are an input error
  }

  try {
    if (sim_cmd->parsed())
      return cmd_simulate(phantom, out_dir, seed, perfect_tracking, truth_masks, speed,
                          scan_length, position_jitter, tilt_jitter, speckle_seed);
    if (detect_cmd->parsed()) return cmd_detect(detect_in, marker_id);
    if (recon_cmd->parsed()) return cmd_reconstruct(recon_in, workers);
    if (metrics_cmd->parsed()) return cmd_metrics(a_dir, b_dir, metrics_workers);
    if (export_cmd->parsed()) return cmd_export_slices(export_in, plane);
  } catch (const io::ValidationError& e) {
    std::cerr << "invalid input, " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ValidationFailed || e.code() == ErrorCode::InvalidArgument) {
      std::cerr << "invalid input: " << e.what() << "\n";
      return 1;
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
