#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

// End-to-end checks of the tssm binary: every subcommand is exercised
// through a real process, exit codes included.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "tssm/video.hpp"

using namespace tssm;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args, const fs::path& capture) {
    const std::string command =
        std::string(TSSM_BIN) + " " + args + " > " + capture.string() + " 2>&1";
    const int status = std::system(command.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(capture);
    result.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return result;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("synth subcommand") {
    TempDir tmp("tssm_cli_synth");
    const fs::path out = tmp.path / "out.txt";

    SUBCASE("writes frames and manifest, byte-identical across reruns") {
        const std::string args = "synth --kind moving_square --frames 6 --size 24x16 --seed 7 "
                                 "--out " + (tmp.path / "clip").string();
        CHECK(run_cli(args, out).exit_code == 0);
        CHECK(fs::exists(tmp.path / "clip" / "frame_000000.ppm"));
        CHECK(fs::exists(tmp.path / "clip" / "frame_000005.ppm"));
        CHECK(fs::exists(tmp.path / "clip" / "manifest.txt"));
        const auto first = read_bytes(tmp.path / "clip" / "frame_000003.ppm");

        const std::string again = "synth --kind moving_square --frames 6 --size 24x16 --seed 7 "
                                  "--out " + (tmp.path / "clip2").string();
        CHECK(run_cli(again, out).exit_code == 0);
        CHECK(read_bytes(tmp.path / "clip2" / "frame_000003.ppm") == first);
    }

    SUBCASE("invalid kind exits 1") {
        const RunResult r = run_cli("synth --kind cubist --out " + (tmp.path / "x").string(), out);
        CHECK(r.exit_code == 1);
        CHECK(!fs::exists(tmp.path / "x"));
    }

    SUBCASE("bad size grammar exits 1") {
        const RunResult r = run_cli("synth --kind occlusion --size 32by32 --out " +
                                        (tmp.path / "y").string(),
                                    out);
        CHECK(r.exit_code == 1);
    }

    SUBCASE("two-frame clips are allowed here (train rejects them later)") {
        const std::string args = "synth --kind moving_square --frames 2 --size 16x16 --seed 1 "
                                 "--out " + (tmp.path / "short").string();
        CHECK(run_cli(args, out).exit_code == 0);
    }
}

TEST_CASE("train, stylize and eval chain") {
    TempDir tmp("tssm_cli_chain");
    const fs::path out = tmp.path / "out.txt";
    const fs::path clip = tmp.path / "clip";
    const fs::path ckpt = tmp.path / "model.tssm";

    // small c/d via config file so the chain stays fast
    const fs::path config = tmp.path / "train.cfg";
    {
        std::ofstream cfg(config);
        cfg << "channels=4\nembed_dim=16\nssm_layers=2\nbatch_frames=4\n";
    }
    REQUIRE(run_cli("synth --kind moving_square --frames 5 --size 16x16 --seed 3 --out " +
                        clip.string(),
                    out).exit_code == 0);

    SUBCASE("train writes checkpoint and log; reruns are bit-identical") {
        const std::string args = "train --clip " + clip.string() +
                                 " --prompt \"mosaic glass\" --iters 4 --seed 11 --config " +
                                 config.string() + " --checkpoint " + ckpt.string();
        REQUIRE(run_cli(args, out).exit_code == 0);
        REQUIRE(fs::exists(ckpt));
        REQUIRE(fs::exists(ckpt.string() + ".log"));
        const auto ckpt_bytes = read_bytes(ckpt);
        const auto log_bytes = read_bytes(ckpt.string() + ".log");
        // log format: one line per iteration with every component
        {
            std::ifstream log(ckpt.string() + ".log");
            std::string line;
            int lines = 0;
            while (std::getline(log, line)) {
                ++lines;
                CHECK(line.find("iter=") == 0);
                CHECK(line.find("total=") != std::string::npos);
                CHECK(line.find("content=") != std::string::npos);
                CHECK(line.find("dir=") != std::string::npos);
                CHECK(line.find("tmd=") != std::string::npos);
                CHECK(line.find("tso=") != std::string::npos);
            }
            CHECK(lines == 4);
        }

        const fs::path ckpt2 = tmp.path / "model2.tssm";
        const std::string rerun = "train --clip " + clip.string() +
                                  " --prompt \"mosaic glass\" --iters 4 --seed 11 --config " +
                                  config.string() + " --checkpoint " + ckpt2.string();
        REQUIRE(run_cli(rerun, out).exit_code == 0);
        CHECK(read_bytes(ckpt2) == ckpt_bytes);
        CHECK(read_bytes(ckpt2.string() + ".log") == log_bytes);

        SUBCASE("stylize round trip and determinism") {
            const std::string stylize_args = "stylize --clip " + clip.string() +
                                             " --prompt \"mosaic glass\" --checkpoint " +
                                             ckpt.string() + " --out " +
                                             (tmp.path / "styled").string();
            REQUIRE(run_cli(stylize_args, out).exit_code == 0);
            for (int t = 0; t < 5; ++t) {
                char name[32];
                std::snprintf(name, sizeof(name), "frame_%06d.ppm", t);
                CHECK(fs::exists(tmp.path / "styled" / name));
            }
            const auto styled = read_bytes(tmp.path / "styled" / "frame_000002.ppm");
            const std::string again = "stylize --clip " + clip.string() +
                                      " --prompt \"mosaic glass\" --checkpoint " + ckpt.string() +
                                      " --out " + (tmp.path / "styled2").string();
            REQUIRE(run_cli(again, out).exit_code == 0);
            CHECK(read_bytes(tmp.path / "styled2" / "frame_000002.ppm") == styled);
        }

        SUBCASE("eval writes the mandated keys") {
            const std::string eval_args = "eval --clip " + clip.string() +
                                          " --prompt \"mosaic glass\" --checkpoint " +
                                          ckpt.string() + " --report " +
                                          (tmp.path / "report.txt").string();
            REQUIRE(run_cli(eval_args, out).exit_code == 0);
            std::ifstream report(tmp.path / "report.txt");
            const std::string text((std::istreambuf_iterator<char>(report)),
                                   std::istreambuf_iterator<char>());
            CHECK(text.find("t_ssim=") != std::string::npos);
            CHECK(text.find("style_score=") != std::string::npos);
            CHECK(text.find("model_size_bytes=") != std::string::npos);
            CHECK(text.find("pair_ssim_1=") != std::string::npos);
            CHECK(text.find("pair_ssim_4=") != std::string::npos);
        }

        SUBCASE("corrupted checkpoint magic exits 2 and names TSSM") {
            auto bytes = read_bytes(ckpt);
            bytes[0] = 'Z';
            const fs::path bad = tmp.path / "bad.tssm";
            std::ofstream(bad, std::ios::binary)
                .write(reinterpret_cast<const char*>(bytes.data()),
                       static_cast<std::streamsize>(bytes.size()));
            const RunResult r = run_cli("stylize --clip " + clip.string() +
                                            " --prompt x --checkpoint " + bad.string() +
                                            " --out " + (tmp.path / "z").string(),
                                        out);
            CHECK(r.exit_code == 2);
            CHECK(r.output.find("TSSM") != std::string::npos);
        }
    }

    SUBCASE("train rejects a two-frame clip with the default lambda4") {
        const fs::path short_clip = tmp.path / "short";
        REQUIRE(run_cli("synth --kind moving_square --frames 2 --size 16x16 --seed 1 --out " +
                            short_clip.string(),
                        out).exit_code == 0);
        const RunResult r = run_cli("train --clip " + short_clip.string() +
                                        " --prompt x --iters 1 --config " + config.string() +
                                        " --checkpoint " + (tmp.path / "no.tssm").string(),
                                    out);
        CHECK(r.exit_code == 1);
        CHECK(!fs::exists(tmp.path / "no.tssm"));
    }

    SUBCASE("eval on a constant video reports t_ssim=1") {
        VideoClip constant;
        for (int t = 0; t < 3; ++t) constant.frames.push_back(Tensor::full({16, 16, 3}, 0.5f));
        write_clip_dir(tmp.path / "const", constant, ClipManifest{3, 16, 16, "unknown", 0});
        const RunResult r = run_cli("eval --clip " + (tmp.path / "const").string() +
                                        " --prompt x --report " +
                                        (tmp.path / "const_report.txt").string(),
                                    out);
        CHECK(r.exit_code == 0);
        std::ifstream report(tmp.path / "const_report.txt");
        const std::string text((std::istreambuf_iterator<char>(report)),
                               std::istreambuf_iterator<char>());
        CHECK(text.find("t_ssim=1.000000") != std::string::npos);
        // no checkpoint given: size reported as zero
        CHECK(text.find("model_size_bytes=0") != std::string::npos);
    }
}

TEST_CASE("ablate subcommand") {
    TempDir tmp("tssm_cli_ablate");
    const fs::path out = tmp.path / "out.txt";
    const fs::path clip = tmp.path / "clip";
    const fs::path config = tmp.path / "ablate.cfg";
    {
        std::ofstream cfg(config);
        cfg << "channels=4\nembed_dim=16\nssm_layers=2\nbatch_frames=3\n";
    }
    REQUIRE(run_cli("synth --kind moving_square --frames 4 --size 16x16 --seed 5 --out " +
                        clip.string(),
                    out).exit_code == 0);
    const RunResult r = run_cli("ablate --clip " + clip.string() +
                                    " --prompt \"mosaic glass\" --config " + config.string() +
                                    " --iters 2 --seed 9 --out " + (tmp.path / "abl").string(),
                                out);
    CHECK(r.exit_code == 0);
    std::ifstream report(tmp.path / "abl" / "report.txt");
    REQUIRE(bool(report));
    const std::string text((std::istreambuf_iterator<char>(report)),
                           std::istreambuf_iterator<char>());
    CHECK(text.find("full ") != std::string::npos);
    CHECK(text.find("no_tso ") != std::string::npos);
    CHECK(text.find("no_tmd ") != std::string::npos);
    CHECK(text.find("ssm_layers_1 ") != std::string::npos);
}

TEST_CASE("gradcheck subcommand") {
    TempDir tmp("tssm_cli_gradcheck");
    const RunResult r = run_cli("gradcheck --seed 7", tmp.path / "out.txt");
    CHECK(r.exit_code == 0);
    int lines = 0;
    for (char ch : r.output) lines += ch == '\n';
    CHECK(lines == 4);
    CHECK(r.output.find("content max_rel_err=") != std::string::npos);
    CHECK(r.output.find("dir max_rel_err=") != std::string::npos);
    CHECK(r.output.find("tmd max_rel_err=") != std::string::npos);
    CHECK(r.output.find("tso max_rel_err=") != std::string::npos);
}

TEST_CASE("argument handling") {
    TempDir tmp("tssm_cli_args");
    const fs::path out = tmp.path / "out.txt";
    CHECK(run_cli("--help", out).exit_code == 0);
    CHECK(run_cli("synth --help", out).exit_code == 0);
    CHECK(run_cli("train --help", out).exit_code == 0);
    // unknown flag: exit 1, no side effects
    const RunResult r = run_cli("synth --kind moving_square --bogus 1 --out " +
                                    (tmp.path / "clip").string(),
                                out);
    CHECK(r.exit_code == 1);
    CHECK(!fs::exists(tmp.path / "clip"));
    // missing subcommand
    CHECK(run_cli("", out).exit_code == 1);
    // unknown subcommand
    CHECK(run_cli("frobnicate", out).exit_code == 1);
}
