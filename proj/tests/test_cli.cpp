#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "scbct/dataio.hpp"
#include "scbct/geometry.hpp"

namespace fs = std::filesystem;
using namespace scbct;

namespace {

std::string cli_path() {
  const char* env = std::getenv("SCBCT_CLI");
  return env ? env : "./scbct";
}

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = cli_path() + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  std::array<char, 4096> buf{};
  size_t got;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0)
    r.out.append(buf.data(), got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return {std::istreambuf_iterator<char>(is), {}};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

void write_small_geom(const fs::path& path) {
  ScannerGeometry g;
  g.det_px_u = 16;
  g.det_px_v = 16;
  save_geometry(g, path.string());
}

}  // namespace

TEST_CASE("phantom subcommand creates volume files") {
  const fs::path dir = fresh_dir("scbct_cli_phantom");
  const RunResult r =
      run("phantom --kind shells --size 16 --seed 3 --out " + q(dir / "p.vol"));
  CAPTURE(r.out);
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "p.vol"));
  CHECK(fs::exists(dir / "p.raw"));
  const Volume v = load_volume((dir / "p.vol").string());
  CHECK(v.grid.nx == 16);

  SUBCASE("other kinds") {
    CHECK(run("phantom --kind sphere --size 8 --out " + q(dir / "s.vol")).code == 0);
    CHECK(run("phantom --kind cube --size 8 --out " + q(dir / "c.vol")).code == 0);
    CHECK(run("phantom --kind blob --size 8 --out " + q(dir / "b.vol")).code == 1);
  }
}

TEST_CASE("unknown flags exit 1 and echo the offending token") {
  const RunResult top = run("--badflag phantom --out /tmp/x.vol");
  CHECK(top.code == 1);
  CHECK(top.out.find("--badflag") != std::string::npos);

  const RunResult sub = run("phantom --whoops --out /tmp/x.vol");
  CHECK(sub.code == 1);
  CHECK(sub.out.find("--whoops") != std::string::npos);

  CHECK(run("").code == 1);  // subcommand is required
}

TEST_CASE("missing input files exit 2") {
  const RunResult r = run("eval --pred /tmp/nope_missing.vol --gt /tmp/nope_missing.vol");
  CHECK(r.code == 2);
  CHECK(r.out.find("error:") != std::string::npos);
}

TEST_CASE("drr is deterministic for a fixed seed") {
  const fs::path dir = fresh_dir("scbct_cli_drr");
  write_small_geom(dir / "geom.cfg");
  REQUIRE(run("phantom --size 16 --seed 3 --out " + q(dir / "p.vol")).code == 0);

  const std::string common = "drr --volume " + q(dir / "p.vol") + " --geom " +
                             q(dir / "geom.cfg") + " --views 3 --seed 7 --out ";
  REQUIRE(run(common + q(dir / "projA")).code == 0);
  REQUIRE(run(common + q(dir / "projB")).code == 0);

  size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "projA")) {
    const fs::path other = dir / "projB" / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(e.path()) == slurp(other));
    ++files;
  }
  CHECK(files == 5);  // geom.cfg, angles.txt, 3 views

  SUBCASE("different seed differs") {
    REQUIRE(run("drr --volume " + q(dir / "p.vol") + " --geom " +
                q(dir / "geom.cfg") + " --views 3 --seed 8 --out " +
                q(dir / "projC")).code == 0);
    CHECK(slurp(dir / "projA" / "angles.txt") != slurp(dir / "projC" / "angles.txt"));
  }
}

TEST_CASE("eval of a volume against itself prints unit similarity") {
  const fs::path dir = fresh_dir("scbct_cli_eval");
  REQUIRE(run("phantom --size 12 --seed 1 --out " + q(dir / "p.vol")).code == 0);
  const RunResult r = run("eval --pred " + q(dir / "p.vol") + " --gt " +
                          q(dir / "p.vol") + " --csv " + q(dir / "e.csv"));
  CAPTURE(r.out);
  CHECK(r.code == 0);
  CHECK(r.out.find("ssim=1.000000") != std::string::npos);
  CHECK(r.out.find("psnr_db=inf") != std::string::npos);
  CHECK(r.out.find("# ssim:") != std::string::npos);

  const std::string csv = slurp(dir / "e.csv");
  CHECK(csv.find("pred,gt,psnr_db,ssim") == 0);
  CHECK(csv.find("inf,1.000000") != std::string::npos);
}

TEST_CASE("golden path: phantom -> drr -> train -> reconstruct -> eval") {
  const fs::path dir = fresh_dir("scbct_cli_golden");
  write_small_geom(dir / "geom.cfg");
  REQUIRE(run("phantom --size 16 --seed 3 --out " + q(dir / "p.vol")).code == 0);
  REQUIRE(run("drr --volume " + q(dir / "p.vol") + " --geom " +
              q(dir / "geom.cfg") + " --views 2 --seed 7 --out " +
              q(dir / "proj")).code == 0);

  const RunResult tr = run(
      "train --volume " + q(dir / "p.vol") + " --proj " + q(dir / "proj") +
      " --model base --epochs 2 --points 48 --batch 1 --seed 5 --out " +
      q(dir / "run"));
  CAPTURE(tr.out);
  REQUIRE(tr.code == 0);
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));
  CHECK(fs::exists(dir / "run" / "loss.csv"));
  CHECK(slurp(dir / "run" / "loss.csv").rfind("step,loss", 0) == 0);

  const RunResult rc = run("reconstruct --ckpt " + q(dir / "run" / "checkpoint.bin") +
                           " --proj " + q(dir / "proj") + " --size 16 --out " +
                           q(dir / "rec.vol") + " --slices " + q(dir / "rec"));
  CAPTURE(rc.out);
  REQUIRE(rc.code == 0);
  CHECK(fs::exists(dir / "rec.vol"));
  CHECK(fs::exists(dir / "rec_axial.png"));
  CHECK(fs::exists(dir / "rec_coronal.png"));
  CHECK(fs::exists(dir / "rec_sagittal.png"));

  const RunResult ev = run("eval --pred " + q(dir / "rec.vol") + " --gt " +
                           q(dir / "p.vol"));
  CAPTURE(ev.out);
  CHECK(ev.code == 0);
  CHECK(ev.out.find("psnr_db=") != std::string::npos);
  CHECK(ev.out.find("ssim=") != std::string::npos);
}

TEST_CASE("baseline subcommand runs both methods") {
  const fs::path dir = fresh_dir("scbct_cli_baseline");
  write_small_geom(dir / "geom.cfg");
  REQUIRE(run("phantom --kind sphere --size 16 --out " + q(dir / "p.vol")).code == 0);
  REQUIRE(run("drr --volume " + q(dir / "p.vol") + " --geom " +
              q(dir / "geom.cfg") + " --views 6 --equiangular --out " +
              q(dir / "proj")).code == 0);

  CHECK(run("baseline --method fdk --hann --proj " + q(dir / "proj") +
            " --size 16 --out " + q(dir / "fdk.vol")).code == 0);
  const Volume f = load_volume((dir / "fdk.vol").string());
  CHECK(f.grid.nx == 16);

  CHECK(run("baseline --method sart --proj " + q(dir / "proj") +
            " --size 16 --iterations 4 --lambda 0.5 --out " +
            q(dir / "sart.vol")).code == 0);

  SUBCASE("invalid relaxation exits 2") {
    CHECK(run("baseline --method sart --proj " + q(dir / "proj") +
              " --size 16 --lambda 1.5 --out " + q(dir / "bad.vol")).code == 2);
  }
  SUBCASE("unlisted method exits 1") {
    CHECK(run("baseline --method art --proj " + q(dir / "proj") +
              " --out " + q(dir / "bad.vol")).code == 1);
  }
}

TEST_CASE("train runs procedurally and ablate sweeps an axis") {
  const fs::path dir = fresh_dir("scbct_cli_ablate");
  const RunResult tr = run(
      "train --model base --epochs 1 --points 32 --batch 1 --size 16 "
      "--scans 1 --views 2 --seed 5 --out " + q(dir / "run"));
  CAPTURE(tr.out);
  CHECK(tr.code == 0);
  CHECK(fs::exists(dir / "run" / "checkpoint.bin"));

  REQUIRE(run("phantom --size 16 --seed 3 --out " + q(dir / "p.vol")).code == 0);
  write_small_geom(dir / "geom.cfg");
  REQUIRE(run("drr --volume " + q(dir / "p.vol") + " --geom " +
              q(dir / "geom.cfg") + " --views 2 --seed 7 --out " +
              q(dir / "proj")).code == 0);
  const RunResult ab = run(
      "ablate --volume " + q(dir / "p.vol") + " --proj " + q(dir / "proj") +
      " --model base --epochs 1 --points 32 --batch 1 --seed 5 "
      "--axis n_points --values 24,32 --out " + q(dir / "abl"));
  CAPTURE(ab.out);
  CHECK(ab.code == 0);
  const std::string csv = slurp(dir / "abl" / "ablation_n_points.csv");
  CHECK(csv.rfind("value,psnr,ssim", 0) == 0);
  CHECK(csv.find("\n24,") != std::string::npos);
  CHECK(csv.find("\n32,") != std::string::npos);

  SUBCASE("k axis on the base variant exits 2") {
    CHECK(run("ablate --volume " + q(dir / "p.vol") + " --proj " +
              q(dir / "proj") + " --model base --epochs 1 --points 16 "
              "--batch 1 --axis k --values 3 --out " + q(dir / "ablk")).code == 2);
  }
}
