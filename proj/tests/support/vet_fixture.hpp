#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "gazechair/calibration.hpp"
#include "gazechair/corpus.hpp"
#include "gazechair/matchers.hpp"
#include "gazechair/preprocess.hpp"

namespace gazechair::test {

// A temporary dataset on which the whole-image matcher scores exactly 32/40,
// plus one spare miss to push it to 31/40.
struct VetFixture {
    matchers::TemplateSet templates;
    calibration::TempDataset temp;
    calibration::SourcedFrame spare_miss;  // predicted Left, for the Right capture
};

inline VetFixture vet_fixture() {
    using namespace calibration;
    const auto pool = corpus::generate_user_corpus(9, 40);
    // Templates: the first generated frame of each class.
    matchers::TemplateSet ts({preprocess::to_grayscale(pool.items[0].frame),
                              preprocess::to_grayscale(pool.items[40].frame),
                              preprocess::to_grayscale(pool.items[80].frame),
                              preprocess::to_grayscale(pool.items[120].frame)});
    // Sort generator frames by what the matcher calls them, then build each
    // class from 8 hits and 2 misses.
    std::array<std::vector<SourcedFrame>, kNumClasses> by_prediction;
    for (const auto& item : pool.items) {
        const GazeClass p = matchers::classify_whole(ts, preprocess::to_grayscale(item.frame)).gaze_class;
        by_prediction[index_of(p)].push_back({item.frame, {item.label, false, false}});
    }
    TempDataset temp;
    for (GazeClass c : kAllClasses) {
        const GazeClass other = c == GazeClass::Right ? GazeClass::Left : GazeClass::Right;
        if (by_prediction[index_of(c)].size() < 8 || by_prediction[index_of(other)].size() < 3) {
            throw std::logic_error("vet fixture: generator pool too small");
        }
        ClassCapture cap;
        cap.requested = c;
        cap.frames.assign(by_prediction[index_of(c)].begin(), by_prediction[index_of(c)].begin() + 8);
        cap.frames.push_back(by_prediction[index_of(other)][0]);
        cap.frames.push_back(by_prediction[index_of(other)][1]);
        temp[index_of(c)] = cap;
    }
    return {std::move(ts), std::move(temp), by_prediction[index_of(GazeClass::Left)][2]};
}

}  // namespace gazechair::test
