#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "priorfill/metrics/image_io.hpp"
#include "priorfill/trainer/config.hpp"
#include "priorfill/trainer/dataset.hpp"

using namespace priorfill;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

std::string cli_path() {
    const char* p = std::getenv("PRIORFILL_CLI");
    return p ? p : "priorfill";
}

RunResult run(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

// Shared workspace: a tiny config, a trained MAE and ACR, an image and masks.
struct Workspace {
    fs::path dir;
    std::string config;

    Workspace() {
        dir = fs::temp_directory_path() / "priorfill_test_cli";
        fs::remove_all(dir);
        fs::create_directories(dir / "images");
        RunConfig c;
        c.mae.dim = 16;
        c.mae.heads = 2;
        c.mae.enc_layers = 1;
        c.mae.dec_layers = 2;
        c.mae.attn_layers_used = 2;
        c.mae.feature_layer = 2;
        c.mae.mlp_ratio = 2;
        c.acr.widths = {4, 8, 8, 8};
        c.acr.n_ffc = 2;
        c.disc.widths = {4, 4, 8, 8};
        c.batch_size = 2;
        c.synthetic_count = 2;
        c.mae_steps = 5;
        c.total_steps = 4;
        config = (dir / "config.json").string();
        save_run_config(config, c);
        for (int64_t i = 0; i < 2; ++i)
            write_png_tensor((dir / "images" / ("img" + std::to_string(i) + ".png")).string(), synthetic_image(i, 32));
    }
    ~Workspace() { fs::remove_all(dir); }
    std::string p(const std::string& rel) const { return (dir / rel).string(); }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

void ensure_trained() {
    static bool done = false;
    if (done) return;
    Workspace& w = ws();
    RunResult m = run("pretrain-mae --config " + w.config + " --out " + w.p("mae"));
    REQUIRE_MESSAGE(m.code == 0, m.out);
    RunResult a = run("train-acr --config " + w.config + " --mae " + w.p("mae/checkpoint") + " --out " + w.p("acr") +
                      " --deterministic");
    REQUIRE_MESSAGE(a.code == 0, a.out);
    done = true;
}

}  // namespace

TEST_CASE("exit codes for bad invocations") {
    CHECK(run("").code == 2);
    CHECK(run("no-such-command").code == 2);
    CHECK(run("gradcheck --module bogus").code == 2);
    CHECK(run("inpaint --image x.png").code == 2);
    RunResult missing = run("inpaint --ckpt-acr /nonexistent --image /nonexistent.png --mask /nonexistent.png --out " +
                            ws().p("o.png"));
    CHECK(missing.code == 1);
    CHECK(missing.out.find("error:") != std::string::npos);
    CHECK(run("--help").code == 0);
}

TEST_CASE("genmask writes masks of the requested kind") {
    Workspace& w = ws();
    RunResult r = run("genmask --kind irregular --size 32 --count 3 --ratio 0.3 --seed 4 --out " + w.p("masks"));
    REQUIRE_MESSAGE(r.code == 0, r.out);
    for (int i = 0; i < 3; ++i) {
        MaskMap m = read_mask_png(w.p("masks/mask_000" + std::to_string(i) + ".png"));
        CHECK(m.h == 32);
        CHECK(std::abs(m.ratio() - 0.3) <= 0.05);
    }
    RunResult again = run("genmask --kind irregular --size 32 --count 1 --ratio 0.3 --seed 4 --out " + w.p("masks2"));
    REQUIRE(again.code == 0);
    CHECK(read_file(w.p("masks/mask_0000.png")) == read_file(w.p("masks2/mask_0000.png")));
    CHECK(run("genmask --kind training --size 32 --count 2 --out " + w.p("masks3")).code == 0);
    CHECK(run("genmask --kind square --size 32 --count 1 --ratio 0.25 --out " + w.p("masks4")).code == 0);
    CHECK(read_mask_png(w.p("masks4/mask_0000.png")).ratio() == doctest::Approx(0.25));
}

TEST_CASE("training writes logs and checkpoints") {
    ensure_trained();
    Workspace& w = ws();
    CHECK(fs::exists(w.p("mae/checkpoint/manifest.json")));
    CHECK(fs::exists(w.p("mae/mae_log.csv")));
    CHECK(fs::exists(w.p("acr/checkpoint/blob.bin")));
    const std::string log = read_file(w.p("acr/train_log.csv"));
    CHECK(log.rfind("step,loss_l1,", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 5);
    CHECK(run("train-acr --config " + w.config + " --out " + w.p("acr_x")).code == 1);
}

TEST_CASE("inpaint with an empty mask returns the input") {
    ensure_trained();
    Workspace& w = ws();
    write_mask_png(w.p("empty.png"), MaskMap(32, 32));
    RunResult r = run("inpaint --ckpt-acr " + w.p("acr/checkpoint") + " --ckpt-mae " + w.p("mae/checkpoint") +
                      " --image " + w.p("images/img0.png") + " --mask " + w.p("empty.png") + " --gt " +
                      w.p("images/img0.png") + " --out " + w.p("same.png"));
    REQUIRE_MESSAGE(r.code == 0, r.out);
    CHECK(read_png(w.p("same.png")).pixels == read_png(w.p("images/img0.png")).pixels);
    CHECK(r.out.find("psnr 99.0000") != std::string::npos);
}

TEST_CASE("inpaint is deterministic and keeps known pixels") {
    ensure_trained();
    Workspace& w = ws();
    write_mask_png(w.p("square.png"), square_mask(32, 32, 0.25));
    const std::string base = "inpaint --ckpt-acr " + w.p("acr/checkpoint") + " --ckpt-mae " + w.p("mae/checkpoint") +
                             " --image " + w.p("images/img1.png") + " --mask " + w.p("square.png") + " --gt " +
                             w.p("images/img1.png");
    RunResult a = run(base + " --out " + w.p("a.png"));
    RunResult b = run(base + " --out " + w.p("b.png"));
    REQUIRE_MESSAGE(a.code == 0, a.out);
    REQUIRE(b.code == 0);
    CHECK(read_file(w.p("a.png")) == read_file(w.p("b.png")));
    CHECK(a.out.find("hole_psnr") != std::string::npos);
    Image8 in = read_png(w.p("images/img1.png")), out = read_png(w.p("a.png"));
    MaskMap m = square_mask(32, 32, 0.25);
    for (int64_t i = 0; i < 32 * 32; ++i)
        if (!m.bits[static_cast<size_t>(i)])
            for (int c = 0; c < 3; ++c)
                REQUIRE(in.pixels[static_cast<size_t>(i * 3 + c)] == out.pixels[static_cast<size_t>(i * 3 + c)]);
    RunResult wrong = run("inpaint --ckpt-acr " + w.p("acr/checkpoint") + " --ckpt-mae /nonexistent --image " +
                          w.p("images/img1.png") + " --mask " + w.p("square.png") + " --out " + w.p("c.png"));
    CHECK(wrong.code == 1);
}

TEST_CASE("eval and vis-attn") {
    ensure_trained();
    Workspace& w = ws();
    RunResult e = run("eval --ckpt-acr " + w.p("acr/checkpoint") + " --ckpt-mae " + w.p("mae/checkpoint") +
                      " --images " + w.p("images") + " --out " + w.p("eval"));
    REQUIRE_MESSAGE(e.code == 0, e.out);
    auto j = nlohmann::json::parse(read_file(w.p("eval/report.json")));
    CHECK(j["images"].size() == 2);
    CHECK(read_file(w.p("eval/report.csv")).rfind("name,psnr,ssim,mask_ratio,bucket", 0) == 0);

    write_mask_png(w.p("square.png"), square_mask(32, 32, 0.25));
    RunResult v = run("vis-attn --ckpt-mae " + w.p("mae/checkpoint") + " --image " + w.p("images/img0.png") +
                      " --mask " + w.p("square.png") + " --cell 8 --out " + w.p("attn.png"));
    REQUIRE_MESSAGE(v.code == 0, v.out);
    CHECK(read_png(w.p("attn.png")).width == 32);
}

TEST_CASE("gradcheck reports pass and catches an injected fault") {
    RunResult ok = run("gradcheck --module upsampler");
    CHECK(ok.code == 0);
    CHECK(ok.out.find("gradcheck PASS") != std::string::npos);
    RunResult bad = run("gradcheck --module numerics --inject-conv-fault");
    CHECK(bad.code == 1);
    CHECK(bad.out.find("gradcheck FAIL") != std::string::npos);
}

TEST_CASE("selftest passes") {
    RunResult r = run("selftest");
    CHECK_MESSAGE(r.code == 0, r.out);
    CHECK(r.out.find("selftest PASS") != std::string::npos);
}
