#pragma once

#include "gcr/features.hpp"
#include "gcr/registration.hpp"

#include <string>
#include <vector>

namespace gcr {

// Which components feed class representations:
//   B        mean features only, no registration
//   B_S1     image-level augmentation, means, no registration
//   B_S1_S2  augmentation + convex feature synthesis, no registration
//   B_R      means + registration
//   B_S1_R   augmentation + means + registration
//   FULL     augmentation + synthesis + registration
enum class Ablation { B, B_S1, B_S1_S2, B_R, B_S1_R, FULL };

inline bool ablation_has_s1(Ablation a) {
    return a == Ablation::B_S1 || a == Ablation::B_S1_S2 || a == Ablation::B_S1_R ||
           a == Ablation::FULL;
}
inline bool ablation_has_s2(Ablation a) {
    return a == Ablation::B_S1_S2 || a == Ablation::FULL;
}
inline bool ablation_has_r(Ablation a) {
    return a == Ablation::B_R || a == Ablation::B_S1_R || a == Ablation::FULL;
}

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct Model {
    FeatureExtractor extractor;
    RegistrationModule registration;
    GlobalTable table;
    Ablation ablation{Ablation::FULL};

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out = extractor.parameters();
        for (Parameter* p : registration.parameters()) out.push_back(p);
        out.push_back(&table.parameter());
        return out;
    }
};

}  // namespace gcr
