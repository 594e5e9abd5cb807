// Generates the synthetic toy datasets (global retrieval set and region/hard
// negative set) as JSONL files ready for the curate/train/eval commands.

#include <iostream>

#include <CLI11.hpp>

#include "fgclip/dataset.hpp"
#include "fgclip/lexicon.hpp"
#include "fgclip/toydata.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic toy dataset generator"};
    std::string out = "toydata";
    uint64_t seed = 0;
    std::string kind = "global";
    long images = 64;
    long difficulty = 1;
    app.add_option("--out", out, "output directory");
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--kind", kind, "global | region")->check(CLI::IsMember({"global", "region"}));
    app.add_option("--images", images, "images per concept (global) or per combo (region)");
    app.add_option("--difficulty", difficulty, "attribute words replaced per negative (region)")
        ->check(CLI::Range(1, 3));
    CLI11_PARSE(app, argc, argv);

    try {
        fgclip::ToySplit split;
        if (kind == "global") {
            split = fgclip::make_global_toy(seed, 8, images, 1);
        } else {
            auto lexicon = fgclip::AttributeLexicon::builtin_default();
            split = fgclip::make_region_toy(seed, lexicon, images, 2, difficulty);
            lexicon.save(out + "/lexicon.json");
        }
        fgclip::write_records_jsonl(split.train, out + "/train.jsonl");
        fgclip::write_records_jsonl(split.eval, out + "/eval.jsonl");
        std::cout << "wrote " << split.train.size() << " train / " << split.eval.size()
                  << " eval records under " << out << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
