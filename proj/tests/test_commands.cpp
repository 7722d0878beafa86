#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <sys/wait.h>

#include "cardiacnet/commands.hpp"
#include "test_util.hpp"

using namespace cardiacnet;
namespace fs = std::filesystem;

namespace {

const char* kPhantomConfig = "dims=24 24 16\nspacing=2.5 2.5 3.5\ntube_length_mm=6\n";

std::string train_config_text(const std::string& extra = "") {
  return "base_filters=2\nbatch=4\nepochs=1\naugment=false\nslice_stride=2\nlr=0.01\n" + extra;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return read_file_bytes(p); }

std::size_t file_count(const fs::path& dir) {
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

// Phantom data set in `dir/data`, plus the config files.
struct Workspace {
  testutil::TempDir dir;
  fs::path data, phantom_cfg, train_cfg;

  explicit Workspace(const std::string& tag, int count = 2) : dir(tag) {
    data = dir / "data";
    fs::create_directories(data);
    phantom_cfg = dir / "phantom.cfg";
    train_cfg = dir / "train.cfg";
    write_text(phantom_cfg, kPhantomConfig);
    write_text(train_cfg, train_config_text());
    std::ostringstream out, err;
    if (cmd_phantom(count, data, 9, phantom_cfg, out, err) != 0) throw std::runtime_error(err.str());
  }
};

int train(const Workspace& ws, ViewAxis view, const fs::path& out_ckpt, const fs::path* config = nullptr) {
  std::ostringstream out, err;
  return cmd_train(view, ws.data, config ? *config : ws.train_cfg, out_ckpt, std::nullopt, out, err);
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string(CARDIACNET_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  std::string text;
  char buf[256];
  while (std::fgets(buf, sizeof(buf), pipe)) text += buf;
  const int status = pclose(pipe);
  if (output) *output = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

// ---------------------------------------------------------------- phantom

TEST(CmdPhantom, WritesPairs) {
  testutil::TempDir dir("phantom_count");
  write_text(dir / "p.cfg", kPhantomConfig);
  fs::create_directories(dir / "out");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_phantom(5, dir / "out", 1, dir / "p.cfg", out, err), 0) << err.str();
  EXPECT_EQ(file_count(dir / "out"), 10u);
  for (int i = 0; i < 5; ++i) {
    const auto img = read_intensity_cvol(dir / "out" / (phantom_stem(i) + "_img.cvl"));
    const auto lbl = read_label_cvol(dir / "out" / (phantom_stem(i) + "_lbl.cvl"));
    EXPECT_EQ(img.dims(), (Dims{24, 24, 16}));
    EXPECT_EQ(lbl.spacing(), (Spacing{2.5f, 2.5f, 3.5f}));
  }
  EXPECT_EQ(find_data_pairs(dir / "out").size(), 5u);
}

TEST(CmdPhantom, SameSeedSameBytes) {
  testutil::TempDir dir("phantom_seed");
  write_text(dir / "p.cfg", kPhantomConfig);
  for (const char* sub : {"a", "b", "c"}) fs::create_directories(dir / sub);
  std::ostringstream out, err;
  ASSERT_EQ(cmd_phantom(2, dir / "a", 42, dir / "p.cfg", out, err), 0);
  ASSERT_EQ(cmd_phantom(2, dir / "b", 42, dir / "p.cfg", out, err), 0);
  ASSERT_EQ(cmd_phantom(2, dir / "c", 43, dir / "p.cfg", out, err), 0);
  for (const char* f : {"p000_img.cvl", "p000_lbl.cvl", "p001_img.cvl", "p001_lbl.cvl"})
    EXPECT_EQ(bytes_of(dir / "a" / f), bytes_of(dir / "b" / f)) << f;
  EXPECT_NE(bytes_of(dir / "a" / "p000_img.cvl"), bytes_of(dir / "c" / "p000_img.cvl"));
}

TEST(CmdPhantom, MissingDirectoryIsIoError) {
  testutil::TempDir dir("phantom_missing");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_phantom(3, dir / "nope", 1, std::nullopt, out, err), 3);
  EXPECT_FALSE(fs::exists(dir / "nope"));
  EXPECT_NE(err.str().find("error:"), std::string::npos);
}

TEST(CmdPhantom, FailureMidwayLeavesNoFiles) {
  testutil::TempDir dir("phantom_partial");
  write_text(dir / "p.cfg", kPhantomConfig);
  fs::create_directories(dir / "out" / "p002_img.cvl");  // blocks the third write
  std::ostringstream out, err;
  EXPECT_EQ(cmd_phantom(4, dir / "out", 1, dir / "p.cfg", out, err), 3);
  EXPECT_EQ(file_count(dir / "out"), 1u);
  EXPECT_TRUE(fs::is_directory(dir / "out" / "p002_img.cvl"));
}

TEST(CmdPhantom, BadConfigIsExit2) {
  testutil::TempDir dir("phantom_cfg");
  std::ostringstream out, err;
  write_text(dir / "bad.cfg", "dims=24 24\n");
  EXPECT_EQ(cmd_phantom(1, dir.path(), 1, dir / "bad.cfg", out, err), 2);
  write_text(dir / "unknown.cfg", "radius=3\n");
  EXPECT_EQ(cmd_phantom(1, dir.path(), 1, dir / "unknown.cfg", out, err), 2);
  EXPECT_EQ(cmd_phantom(0, dir.path(), 1, std::nullopt, out, err), 2);
  EXPECT_EQ(cmd_phantom(1, dir.path(), 1, dir / "absent.cfg", out, err), 2);
  write_text(dir / "tiny.cfg", "dims=4 4 4\n");
  EXPECT_EQ(cmd_phantom(1, dir.path(), 1, dir / "tiny.cfg", out, err), 2);
  EXPECT_EQ(file_count(dir.path()), 3u);  // only the config files
}

// ---------------------------------------------------------------- train

TEST(CmdTrain, OneEpochWritesCheckpoint) {
  Workspace ws("train_smoke");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(ViewAxis::S, ws.data, ws.train_cfg, ws.dir / "s.ckpt", std::nullopt, out, err), 0) << err.str();
  const auto ck = load_checkpoint(ws.dir / "s.ckpt");
  EXPECT_EQ(ck.epoch, 1);
  EXPECT_EQ(ck.config.view, ViewAxis::S);
  EXPECT_EQ(ck.arch.base_filters, 2);
  EXPECT_EQ(ck.volume_dims, (Dims{24, 24, 16}));
  const std::string line = out.str();
  ASSERT_EQ(line.rfind("epoch=1 loss=", 0), 0u) << line;
  const double loss = parse_double(line.substr(13, line.find('\n') - 13));
  EXPECT_TRUE(std::isfinite(loss));
}

TEST(CmdTrain, LossHeadsGiveDistinctCheckpoints) {
  Workspace ws("train_heads");
  write_text(ws.dir / "ce.cfg", train_config_text("loss=cross_entropy\n"));
  const auto ce_cfg = ws.dir / "ce.cfg";
  ASSERT_EQ(train(ws, ViewAxis::A, ws.dir / "z.ckpt"), 0);
  ASSERT_EQ(train(ws, ViewAxis::A, ws.dir / "ce.ckpt", &ce_cfg), 0);
  const auto z = load_checkpoint(ws.dir / "z.ckpt");
  const auto ce = load_checkpoint(ws.dir / "ce.ckpt");
  EXPECT_EQ(z.config.loss, LossKind::ZLoss);
  EXPECT_EQ(ce.config.loss, LossKind::CrossEntropy);
  EXPECT_NE(z.params, ce.params);
  EXPECT_NE(bytes_of(ws.dir / "z.ckpt"), bytes_of(ws.dir / "ce.ckpt"));
}

TEST(CmdTrain, IdenticalRunsGiveIdenticalBytes) {
  Workspace ws("train_det");
  ASSERT_EQ(train(ws, ViewAxis::C, ws.dir / "a.ckpt"), 0);
  ASSERT_EQ(train(ws, ViewAxis::C, ws.dir / "b.ckpt"), 0);
  EXPECT_EQ(bytes_of(ws.dir / "a.ckpt"), bytes_of(ws.dir / "b.ckpt"));
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(ViewAxis::C, ws.data, ws.train_cfg, ws.dir / "c.ckpt", 77, out, err), 0);
  EXPECT_NE(bytes_of(ws.dir / "a.ckpt"), bytes_of(ws.dir / "c.ckpt"));
  EXPECT_EQ(load_checkpoint(ws.dir / "c.ckpt").config.seed, 77u);
}

TEST(CmdTrain, NonFiniteDataIsExit5) {
  Workspace ws("train_nan");
  auto img = read_intensity_cvol(ws.data / "p001_img.cvl");
  img(3, 4, 5) = std::numeric_limits<float>::quiet_NaN();
  write_cvol(img, ws.data / "p001_img.cvl");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(ViewAxis::A, ws.data, ws.train_cfg, ws.dir / "x.ckpt", std::nullopt, out, err), 5);
  EXPECT_FALSE(fs::exists(ws.dir / "x.ckpt"));
}

TEST(CmdTrain, DivergingLossIsExit5) {
  Workspace ws("train_diverge");
  write_text(ws.dir / "hot.cfg", "base_filters=2\nbatch=4\nepochs=3\naugment=false\nslice_stride=2\nlr=1e30\n");
  const auto cfg = ws.dir / "hot.cfg";
  EXPECT_EQ(train(ws, ViewAxis::A, ws.dir / "x.ckpt", &cfg), 5);
  EXPECT_FALSE(fs::exists(ws.dir / "x.ckpt"));
}

TEST(CmdTrain, UnpairedDataIsExit4) {
  Workspace ws("train_unpaired");
  fs::remove(ws.data / "p001_lbl.cvl");
  EXPECT_EQ(train(ws, ViewAxis::A, ws.dir / "x.ckpt"), 4);
  fs::create_directories(ws.dir / "empty");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(ViewAxis::A, ws.dir / "empty", ws.train_cfg, ws.dir / "x.ckpt", std::nullopt, out, err), 4);
  EXPECT_EQ(cmd_train(ViewAxis::A, ws.dir / "absent", ws.train_cfg, ws.dir / "x.ckpt", std::nullopt, out, err), 3);
}

TEST(CmdTrain, MismatchedPairIsExit4) {
  Workspace ws("train_mismatch");
  write_cvol(LabelVolume(Dims{24, 24, 15}, Spacing{2.5f, 2.5f, 3.5f}), ws.data / "p000_lbl.cvl");
  EXPECT_EQ(train(ws, ViewAxis::A, ws.dir / "x.ckpt"), 4);
}

TEST(CmdTrain, BadConfigIsExit2) {
  Workspace ws("train_cfg");
  for (const char* bad : {"lr=0\n", "batch=1\n", "loss=mse\n", "epochs=0\n", "learning_rate=1\n", "batch=100\n"}) {
    write_text(ws.dir / "bad.cfg", train_config_text(bad));
    const auto cfg = ws.dir / "bad.cfg";
    EXPECT_EQ(train(ws, ViewAxis::A, ws.dir / "x.ckpt", &cfg), 2) << bad;
  }
  EXPECT_FALSE(fs::exists(ws.dir / "x.ckpt"));
}

// ---------------------------------------------------------------- segment

class CmdSegment : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ws_ = new Workspace("segment");
    for (ViewAxis v : kAllViews) {
      const auto p = ckpt(v);
      if (train(*ws_, v, p) != 0) throw std::runtime_error("training failed");
    }
  }
  static void TearDownTestSuite() {
    delete ws_;
    ws_ = nullptr;
  }
  static fs::path ckpt(ViewAxis v) { return ws_->dir / (std::string("view_") + view_letter(v) + ".ckpt"); }
  static fs::path image() { return ws_->data / "p000_img.cvl"; }
  static fs::path out(const std::string& name) { return ws_->dir / name; }

  static int segment(const std::vector<fs::path>& ckpts, const std::string& mode, const std::string& name,
                     std::string* stdout_text = nullptr, std::string* stderr_text = nullptr) {
    std::ostringstream o, e;
    const int rc = cmd_segment(image(), ckpts, mode, out(name), o, e);
    if (stdout_text) *stdout_text = o.str();
    if (stderr_text) *stderr_text = e.str();
    return rc;
  }

  static Workspace* ws_;
};

Workspace* CmdSegment::ws_ = nullptr;

TEST_F(CmdSegment, AdaptiveWithIdenticalCheckpointsEqualsLinear) {
  const std::vector<fs::path> same(3, ckpt(ViewAxis::A));
  std::string text, warn;
  ASSERT_EQ(segment(same, "adaptive", "ad", &text, &warn), 0);
  ASSERT_EQ(segment(same, "linear", "lin"), 0);
  EXPECT_EQ(read_label_cvol(out("ad_mask.cvl")), read_label_cvol(out("lin_mask.cvl")));
  EXPECT_EQ(text.rfind("w_A=", 0), 0u) << text;
  EXPECT_NE(warn.find("warning"), std::string::npos);
}

TEST_F(CmdSegment, SingleModeIsThresholdedViewPrediction) {
  ASSERT_EQ(segment({ckpt(ViewAxis::A)}, "single", "single"), 0);
  const auto ck = load_checkpoint(ckpt(ViewAxis::A));
  const auto img = read_intensity_cvol(image());
  const auto prob = predict_view(ck.params, ck.arch, img, ViewAxis::A, ck.preprocess, ck.reference);
  EXPECT_EQ(read_intensity_cvol(out("single_prob.cvl")), prob);
  EXPECT_EQ(read_label_cvol(out("single_mask.cvl")), threshold(prob, 0.5f));
}

TEST_F(CmdSegment, OutputRangesAndWeights) {
  std::string text;
  ASSERT_EQ(segment({ckpt(ViewAxis::C), ckpt(ViewAxis::A), ckpt(ViewAxis::S)}, "adaptive", "all", &text), 0);
  const auto prob = read_intensity_cvol(out("all_prob.cvl"));
  const auto mask = read_label_cvol(out("all_mask.cvl"));
  EXPECT_EQ(prob.dims(), (Dims{24, 24, 16}));
  EXPECT_EQ(prob.spacing(), (Spacing{2.5f, 2.5f, 3.5f}));
  for (float p : prob.voxels()) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f);
  }
  for (auto m : mask.voxels()) EXPECT_LE(m, 1);
  // weights printed in A, S, C order whatever the checkpoint order
  const auto a = text.find("w_A="), s = text.find(" w_S="), c = text.find(" w_C=");
  ASSERT_NE(a, std::string::npos);
  ASSERT_NE(s, std::string::npos);
  ASSERT_NE(c, std::string::npos);
  EXPECT_LT(a, s);
  EXPECT_LT(s, c);
  const double w = parse_double(text.substr(a + 4, s - a - 4));
  EXPECT_GE(w, 0.0);
  EXPECT_LE(w, 1.0);
}

TEST_F(CmdSegment, IsDeterministic) {
  const std::vector<fs::path> all{ckpt(ViewAxis::A), ckpt(ViewAxis::S), ckpt(ViewAxis::C)};
  ASSERT_EQ(segment(all, "linear", "d1"), 0);
  ASSERT_EQ(segment(all, "linear", "d2"), 0);
  EXPECT_EQ(bytes_of(out("d1_prob.cvl")), bytes_of(out("d2_prob.cvl")));
  EXPECT_EQ(bytes_of(out("d1_mask.cvl")), bytes_of(out("d2_mask.cvl")));
}

TEST_F(CmdSegment, ModeCheckpointMismatchIsExit2) {
  EXPECT_EQ(segment({ckpt(ViewAxis::A)}, "adaptive", "bad1"), 2);
  EXPECT_EQ(segment({ckpt(ViewAxis::A), ckpt(ViewAxis::S)}, "single", "bad2"), 2);
  EXPECT_EQ(segment({ckpt(ViewAxis::A)}, "median", "bad3"), 2);
  EXPECT_FALSE(fs::exists(out("bad1_prob.cvl")));
  EXPECT_FALSE(fs::exists(out("bad1_mask.cvl")));
}

TEST_F(CmdSegment, DimsMismatchIsExit6) {
  PhantomParams p;
  p.dims = {24, 24, 20};
  p.spacing = {2.5f, 2.5f, 3.5f};
  write_cvol(generate_phantom(p).image, out("other.cvl"));
  std::ostringstream o, e;
  EXPECT_EQ(cmd_segment(out("other.cvl"), {ckpt(ViewAxis::A)}, "single", out("dims"), o, e), 6);
  EXPECT_FALSE(fs::exists(out("dims_prob.cvl")));
}

TEST_F(CmdSegment, UnreadableInputsAreExit3) {
  write_text(out("junk.ckpt"), "not a checkpoint");
  EXPECT_EQ(segment({out("junk.ckpt")}, "single", "junk"), 3);
  std::ostringstream o, e;
  EXPECT_EQ(cmd_segment(out("absent.cvl"), {ckpt(ViewAxis::A)}, "single", out("absent"), o, e), 3);
}

// ---------------------------------------------------------------- eval

TEST(CmdEval, IdenticalMasks) {
  Workspace ws("eval_same", 1);
  const auto truth = ws.data / "p000_lbl.cvl";
  std::ostringstream out, err;
  ASSERT_EQ(cmd_eval(truth, truth, ws.dir / "r.txt", out, err), 0) << err.str();
  const auto r = parse_report(read_text(ws.dir / "r.txt"));
  EXPECT_EQ(r.dice, 1.0);
  EXPECT_EQ(r.s2s_mm, 0.0);
  EXPECT_NE(read_text(ws.dir / "r.txt").find("dice=1\n"), std::string::npos);
  EXPECT_EQ(out.str().rfind("dice=1\n", 0), 0u);
}

TEST(CmdEval, ReportMatchesInMemoryAndStdout) {
  Workspace ws("eval_report", 2);
  const auto pred = ws.data / "p000_lbl.cvl", truth = ws.data / "p001_lbl.cvl";
  std::ostringstream out, err;
  ASSERT_EQ(cmd_eval(pred, truth, ws.dir / "r.txt", out, err), 0);
  const auto expected = evaluate(read_label_cvol(pred), read_label_cvol(truth));
  const auto parsed = parse_report(read_text(ws.dir / "r.txt"));
  EXPECT_EQ(parsed, expected);
  const std::string line = out.str().substr(0, out.str().find('\n'));
  EXPECT_EQ(line, "dice=" + format_double(*parsed.dice));
  EXPECT_LT(*parsed.dice, 1.0);
}

TEST(CmdEval, EmptyMaskIsExit7WithReport) {
  Workspace ws("eval_empty", 1);
  write_cvol(LabelVolume(Dims{24, 24, 16}, Spacing{2.5f, 2.5f, 3.5f}), ws.dir / "empty.cvl");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_eval(ws.dir / "empty.cvl", ws.data / "p000_lbl.cvl", ws.dir / "r.txt", out, err), 7);
  ASSERT_TRUE(fs::exists(ws.dir / "r.txt"));
  const auto r = parse_report(read_text(ws.dir / "r.txt"));
  EXPECT_FALSE(r.s2s_mm);
  EXPECT_EQ(r.dice, 0.0);
}

TEST(CmdEval, GeometryMismatchIsExit6) {
  Workspace ws("eval_dims", 1);
  write_cvol(LabelVolume(Dims{24, 24, 15}, Spacing{2.5f, 2.5f, 3.5f}), ws.dir / "small.cvl");
  write_cvol(LabelVolume(Dims{24, 24, 16}, Spacing{1.0f, 2.5f, 3.5f}), ws.dir / "spaced.cvl");
  std::ostringstream out, err;
  EXPECT_EQ(cmd_eval(ws.dir / "small.cvl", ws.data / "p000_lbl.cvl", ws.dir / "r.txt", out, err), 6);
  EXPECT_EQ(cmd_eval(ws.dir / "spaced.cvl", ws.data / "p000_lbl.cvl", ws.dir / "r.txt", out, err), 6);
  EXPECT_FALSE(fs::exists(ws.dir / "r.txt"));
  // an intensity volume is not a mask
  EXPECT_EQ(cmd_eval(ws.data / "p000_img.cvl", ws.data / "p000_lbl.cvl", ws.dir / "r.txt", out, err), 3);
}

// ---------------------------------------------------------------- executable

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("bogus"), 2);
  EXPECT_EQ(run_cli("train somewhere --view x --out a.ckpt"), 2);
  EXPECT_EQ(run_cli("segment img.cvl --out x"), 2);
}

TEST(Cli, PhantomTrainSegmentEval) {
  testutil::TempDir dir("cli");
  write_text(dir / "p.cfg", kPhantomConfig);
  write_text(dir / "t.cfg", train_config_text());
  fs::create_directories(dir / "data");
  const std::string d = dir.path().string();
  std::string text;
  ASSERT_EQ(run_cli("phantom 2 --out " + d + "/data --seed 5 --config " + d + "/p.cfg", &text), 0) << text;
  EXPECT_EQ(file_count(dir / "data"), 4u);
  ASSERT_EQ(run_cli("train " + d + "/data --view s --config " + d + "/t.cfg --seed 3 --out " + d + "/s.ckpt", &text), 0)
      << text;
  EXPECT_EQ(text.rfind("epoch=1 loss=", 0), 0u) << text;
  const auto ck = load_checkpoint(dir / "s.ckpt");
  EXPECT_EQ(ck.config.view, ViewAxis::S);
  EXPECT_EQ(ck.config.seed, 3u);
  ASSERT_EQ(run_cli("segment " + d + "/data/p000_img.cvl --mode single --ckpt " + d + "/s.ckpt --out " + d + "/seg", &text),
            0)
      << text;
  ASSERT_EQ(run_cli("eval " + d + "/seg_mask.cvl " + d + "/data/p000_lbl.cvl --out " + d + "/r.txt", &text), 0) << text;
  const auto r = parse_report(read_text(dir / "r.txt"));
  EXPECT_EQ(text.substr(0, text.find('\n')), "dice=" + format_double(*r.dice));
  EXPECT_EQ(run_cli("eval " + d + "/seg_mask.cvl " + d + "/missing.cvl --out " + d + "/r2.txt"), 3);
}
