#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "ugss/cli.hpp"
#include "ugss/config.hpp"
#include "ugss/container.hpp"

using namespace ugss;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string out;
    std::string err;
};

CliRun run(const std::vector<std::string>& args) {
    std::ostringstream o, e;
    CliRun r;
    r.code = run_cli(args, o, e);
    r.out = o.str();
    r.err = e.str();
    return r;
}

void write_json(const fs::path& p, const Json& j) {
    fs::create_directories(p.parent_path());
    std::ofstream(p) << j.dump(2);
}

Json small_phantom_json() { return {{"shape", {32, 32, 32}}, {"cranial_extent_jitter", 8}, {"overannotation_max_slices", 8}}; }

Json tiny_train_json(int epochs) {
    return {{"epochs", epochs},
            {"patch_depth", 8},
            {"model", {{"heads", 2}, {"levels", 2}, {"base_channels", 4}}},
            {"inference", {{"patch_depth", 8}}},
            {"validate_every", 0}};
}

int csv_rows(const std::string& text) { return static_cast<int>(std::count(text.begin(), text.end(), '\n')) - 1; }

// Tag balance check for the generated SVG (no comments or CDATA are emitted).
bool well_formed_xml(const std::string& s) {
    std::vector<std::string> stack;
    std::size_t i = 0;
    bool root_seen = false;
    while ((i = s.find('<', i)) != std::string::npos) {
        const std::size_t j = s.find('>', i);
        if (j == std::string::npos) return false;
        std::string tag = s.substr(i + 1, j - i - 1);
        i = j + 1;
        if (tag.empty()) return false;
        if (tag[0] == '?' || tag[0] == '!') continue;
        if (tag[0] == '/') {
            const std::string name = tag.substr(1);
            if (stack.empty() || stack.back() != name) return false;
            stack.pop_back();
            continue;
        }
        const bool self_close = tag.back() == '/';
        const std::string name = tag.substr(0, tag.find_first_of(" \t\n/"));
        if (stack.empty() && root_seen) return false;
        root_seen = true;
        if (!self_close) stack.push_back(name);
    }
    return root_seen && stack.empty();
}

class CliTest : public ::testing::Test {
protected:
    test::TempDir dir{"cli"};
    fs::path p(const std::string& s) const { return dir / s; }
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
    EXPECT_EQ(run({"--help"}).code, kExitOk);
    EXPECT_EQ(run({}).code, kExitConfig);
    EXPECT_EQ(run({"frobnicate"}).code, kExitConfig);
    EXPECT_EQ(run({"ablation", "--parallel-folds", "0"}).code, kExitConfig);
    EXPECT_EQ(run({"plot"}).code, kExitConfig);
    EXPECT_FALSE(version_string().empty());
}

TEST_F(CliTest, GenerateRejectsBadProbabilityWithFieldName) {
    write_json(p("bad.json"), {{"phantom", {{"availability_probs", {{"bladder", 1.5}}}}}});
    const CliRun r = run({"generate", "--config", p("bad.json").string(), "--out", p("bad").string()});
    EXPECT_EQ(r.code, kExitConfig);
    EXPECT_NE(r.err.find("phantom.availability_probs.bladder"), std::string::npos) << r.err;
    const Json rj = load_json_file(p("bad") / "run.json");
    EXPECT_EQ(rj["exit_code"], kExitConfig);
    EXPECT_EQ(rj["status"], "error");
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
    EXPECT_EQ(run({"generate", "--config", p("missing.json").string(), "--out", p("x").string()}).code, kExitConfig);
    write_json(p("extra.json"), {{"n", 2}, {"colour", "red"}});
    const CliRun r = run({"generate", "--config", p("extra.json").string(), "--out", p("y").string()});
    EXPECT_EQ(r.code, kExitConfig);
    EXPECT_NE(r.err.find("colour"), std::string::npos);
    write_json(p("nout.json"), {{"n", 2}});
    EXPECT_EQ(run({"generate", "--config", p("nout.json").string()}).code, kExitConfig);
}

TEST_F(CliTest, RuntimeFailureExitsOne) {
    write_json(p("imp.json"), {{"checkpoint", "nope.ckpt"}, {"manifest", "nope.json"}});
    EXPECT_EQ(run({"impute", "--config", p("imp.json").string(), "--out", p("imp").string()}).code, kExitRuntime);
}

TEST_F(CliTest, GenerateSeedIsReproducibleAndRunJsonComplete) {
    write_json(p("gen.json"), {{"n", 3}, {"phantom", small_phantom_json()}});
    for (const char* o : {"g1", "g2"}) {
        const CliRun r = run({"generate", "--config", p("gen.json").string(), "--seed", "7", "--out", p(o).string()});
        ASSERT_EQ(r.code, kExitOk) << r.err;
    }
    EXPECT_EQ(read_text(p("g1") / "manifest.json"), read_text(p("g2") / "manifest.json"));
    const Json rj = load_json_file(p("g1") / "run.json");
    for (const char* k : {"command", "config", "config_sha256", "seed", "versions", "started_utc", "wall_time_s",
                          "exit_code", "outputs"})
        EXPECT_TRUE(rj.contains(k)) << k;
    EXPECT_EQ(rj["seed"], 7);
    EXPECT_EQ(rj["command"], "generate");
    EXPECT_EQ(rj["outputs"]["records"], 3);
}

TEST_F(CliTest, WorkflowThroughEvaluate) {
    Json fp = small_phantom_json();
    fp["availability_probs"] = {{"bowel_bag", 1}, {"bladder", 1}, {"hips", 1}, {"rectum", 1}};
    write_json(p("gen_full.json"), {{"n", 3}, {"phantom", fp}});
    Json pp = small_phantom_json();
    pp["availability_probs"] = {{"bowel_bag", 0}, {"bladder", 1}, {"hips", 1}, {"rectum", 1}};
    write_json(p("gen_part.json"), {{"n", 2}, {"phantom", pp}});
    ASSERT_EQ(run({"generate", "--config", p("gen_full.json").string(), "--out", p("raw_full").string()}).code, 0);
    ASSERT_EQ(run({"generate", "--config", p("gen_part.json").string(), "--out", p("raw_part").string()}).code, 0);

    write_json(p("pre_full.json"), {{"manifest", "raw_full/manifest.json"}});
    write_json(p("pre_part.json"), {{"manifest", "raw_part/manifest.json"}});
    ASSERT_EQ(run({"preprocess", "--config", p("pre_full.json").string(), "--out", p("full").string()}).code, 0);
    ASSERT_EQ(run({"preprocess", "--config", p("pre_part.json").string(), "--out", p("part").string()}).code, 0);

    // Cleaning with every threshold disabled changes nothing.
    write_json(p("clean.json"), {{"manifest", "full/manifest.json"}, {"histogram_bin_mm", 10.0}});
    const CliRun cr = run({"clean", "--config", p("clean.json").string(), "--out", p("clean").string()});
    ASSERT_EQ(cr.code, 0) << cr.err;
    const Json rep = load_json_file(p("clean") / "cleaning_report.json");
    EXPECT_EQ(rep["modified"], 0);
    EXPECT_EQ(rep["kept"], 3);
    EXPECT_EQ(rep["discarded"], 0);
    const Json rj = load_json_file(p("clean") / "run.json");
    EXPECT_EQ(rj["status"], "ok");
    // One CSV row per histogram bin.
    std::vector<double> ext;
    for (const auto& r : load_records(p("full") / "manifest.json")) {
        int top = -1;
        const Mask& h = r.labels.mask(OrganId::Hips);
        for (int z = 0; z < r.shape().z; ++z)
            for (int y = 0; y < r.shape().y; ++y)
                for (int x = 0; x < r.shape().x; ++x)
                    if (h(z, y, x)) top = z;
        ext.push_back((r.shape().z - 1 - top) * r.image.spacing.z);
    }
    const double lo = std::floor(*std::min_element(ext.begin(), ext.end()) / 10.0) * 10.0;
    const int bins = static_cast<int>(std::floor((*std::max_element(ext.begin(), ext.end()) - lo) / 10.0)) + 1;
    EXPECT_EQ(csv_rows(read_text(p("clean") / "histogram_scan_extent.csv")), bins);

    write_json(p("teacher.json"), {{"train_manifest", "clean/manifest.json"}, {"val_manifest", "full/manifest.json"},
                                   {"train", tiny_train_json(1)}});
    const CliRun tr = run({"train-teacher", "--config", p("teacher.json").string(), "--out", p("teacher").string()});
    ASSERT_EQ(tr.code, 0) << tr.err;
    for (const char* f : {"best.ckpt", "last.ckpt", "curves.csv", "summary.json"}) EXPECT_TRUE(fs::exists(p("teacher") / f)) << f;

    write_json(p("impute.json"), {{"checkpoint", "teacher/best.ckpt"}, {"manifest", "part/manifest.json"},
                                  {"inference", {{"patch_depth", 8}}}});
    ASSERT_EQ(run({"impute", "--config", p("impute.json").string(), "--out", p("imputed").string()}).code, 0);

    write_json(p("student.json"), {{"train_manifest", "imputed/manifest.json"}, {"train", tiny_train_json(1)}});
    const CliRun sr = run({"train-student", "--config", p("student.json").string(), "--out", p("student").string()});
    ASSERT_EQ(sr.code, 0) << sr.err;
    // The student refuses records without uncertainty maps.
    write_json(p("student_bad.json"), {{"train_manifest", "full/manifest.json"}, {"train", tiny_train_json(1)}});
    EXPECT_EQ(run({"train-student", "--config", p("student_bad.json").string(), "--out", p("sb").string()}).code, kExitConfig);

    write_json(p("eval.json"), {{"checkpoint", "student/best.ckpt"}, {"manifest", "full/manifest.json"},
                                {"inference", {{"patch_depth", 8}}}, {"use_phantom_truth", true}});
    const CliRun er = run({"evaluate", "--config", p("eval.json").string(), "--out", p("eval").string()});
    ASSERT_EQ(er.code, 0) << er.err;
    EXPECT_EQ(csv_rows(read_text(p("eval") / "metrics.csv")), 3 * kNumOrgans);
}

TEST_F(CliTest, AblationSingleArmAndPlots) {
    Json cfg{{"seed", 2},
             {"phantom", small_phantom_json()},
             {"data", {{"n_full", 4}, {"n_partial", 2}, {"n_test", 2}}},
             {"folds", 2},
             {"model", {{"heads", 2}, {"levels", 2}, {"base_channels", 4}}},
             {"inference", {{"patch_depth", 8}}},
             {"teacher", {{"epochs", 1}, {"patch_depth", 8}, {"validate_every", 0}}},
             {"student", {{"epochs", 1}, {"patch_depth", 8}, {"validate_every", 0}}},
             {"arms", {"baseline_clean"}}};
    write_json(p("abl.json"), cfg);
    const CliRun a = run({"ablation", "--config", p("abl.json").string(), "--out", p("abl1").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    const CliRun b = run({"ablation", "--config", p("abl.json").string(), "--out", p("abl2").string(), "--parallel-folds", "2"});
    ASSERT_EQ(b.code, 0) << b.err;
    EXPECT_EQ(csv_rows(read_text(p("abl1") / "table1.csv")), 1);
    for (const char* f : {"table1.csv", "appendix_dice.csv", "wilcoxon.csv", "histogram_bowel_extent.csv"})
        EXPECT_EQ(read_text(p("abl1") / f), read_text(p("abl2") / f)) << f;

    const CliRun pl = run({"plot", p("abl1").string()});
    ASSERT_EQ(pl.code, 0) << pl.err;
    int svgs = 0;
    for (const auto& e : fs::directory_iterator(p("abl1") / "plots")) {
        if (e.path().extension() != ".svg") continue;
        ++svgs;
        EXPECT_TRUE(well_formed_xml(read_text(e.path()))) << e.path();
    }
    EXPECT_GE(svgs, 3);
    for (const char* f : {"dice.svg", "surface_dice.svg", "hd95.svg"}) EXPECT_TRUE(fs::exists(p("abl1") / "plots" / f));

    fs::create_directories(p("empty"));
    EXPECT_EQ(run({"plot", p("empty").string()}).code, kExitConfig);
}

TEST(XmlCheck, DetectsMalformedInput) {
    EXPECT_TRUE(well_formed_xml("<?xml version=\"1.0\"?><svg><g><rect/></g></svg>"));
    EXPECT_FALSE(well_formed_xml("<svg><g></svg>"));
    EXPECT_FALSE(well_formed_xml("<svg></svg><svg></svg>"));
}
