// Generates a procedural PNG corpus for desk-scale training and demos.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "flowmark/image_io.hpp"
#include "flowmark/synthimage.hpp"

int main(int argc, char** argv) {
    CLI::App app{"generate a procedural image corpus"};
    std::string out_dir;
    int count = 48, size = 64;
    std::uint64_t seed = 7;
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--count", count, "number of images");
    app.add_option("--size", size, "image side length");
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    flowmark::RngStream rng(seed, "corpus");
    for (int i = 0; i < count; ++i) {
        auto img = flowmark::synth_image<float>(size, size, rng.fork(static_cast<std::uint64_t>(i)));
        char name[32];
        std::snprintf(name, sizeof(name), "img_%04d.png", i);
        flowmark::write_png((fs::path(out_dir) / name).string(),
                            flowmark::to_byte(flowmark::ImagePlaneT<float>(img, flowmark::Range::unit_signed)));
    }
    std::cout << "wrote " << count << " images to " << out_dir << "\n";
    return 0;
}
