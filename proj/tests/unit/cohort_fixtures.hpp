#pragma once

#include <algorithm>
#include <functional>
#include <set>

#include "mvrisk/cohort/cohort.hpp"

namespace testutil {

inline mvrisk::cohort::Episode episode(const std::string& patient, const std::string& id, const std::string& date,
                                       mvrisk::cohort::Outcome outcome, mvrisk::cohort::LesionSide side) {
    mvrisk::cohort::Episode e;
    e.patient_id = patient;
    e.episode_id = id;
    e.exam_date = date;
    e.outcome = outcome;
    e.lesion_laterality = side;
    e.age = 60;
    e.site = "S1";
    e.manufacturer = "M1";
    e.images = {id + "_L_CC.png", id + "_L_MLO.png", id + "_R_CC.png", id + "_R_MLO.png"};
    return e;
}

// Every way of giving each case `ratio` distinct compatible controls with no
// control used twice. Each solution lists, per case in input order, the sorted
// control ids.
inline std::vector<std::vector<std::vector<std::string>>> all_perfect_matchings(
    const std::vector<mvrisk::cohort::MatchSubject>& cases, const std::vector<mvrisk::cohort::MatchSubject>& controls,
    const mvrisk::cohort::MatchSpec& spec) {
    std::vector<std::vector<std::vector<std::string>>> out;
    std::vector<std::vector<std::string>> current(cases.size());
    std::vector<bool> used(controls.size(), false);
    std::function<void(std::size_t, std::size_t, std::size_t)> rec = [&](std::size_t ci, std::size_t start,
                                                                        std::size_t taken) {
        if (ci == cases.size()) {
            auto sorted = current;
            for (auto& ids : sorted) std::sort(ids.begin(), ids.end());
            out.push_back(std::move(sorted));
            return;
        }
        if (taken == spec.ratio) {
            rec(ci + 1, 0, 0);
            return;
        }
        for (std::size_t k = start; k < controls.size(); ++k) {
            if (used[k] || !mvrisk::cohort::compatible(cases[ci], controls[k], spec)) continue;
            used[k] = true;
            current[ci].push_back(controls[k].patient_id);
            rec(ci, k + 1, taken + 1);
            current[ci].pop_back();
            used[k] = false;
        }
    };
    rec(0, 0, 0);
    return out;
}

}  // namespace testutil
