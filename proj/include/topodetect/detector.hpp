#pragma once

// Streaming switch-event detector. `simple` compares consecutive samples and
// commits on the first projection above min_proj. `robust` compares samples
// tau apart, ignores trend vectors shorter than min_norm, and commits only
// after the same candidate wins tau times.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "topodetect/common.hpp"
#include "topodetect/grid_model.hpp"
#include "topodetect/powerflow.hpp"
#include "topodetect/signatures.hpp"

namespace topodetect {

enum class DetectorMode { simple, robust };

inline DetectorMode parse_mode(const std::string& s) {
    if (s == "simple") return DetectorMode::simple;
    if (s == "robust") return DetectorMode::robust;
    throw ValidationError("mode must be 'simple' or 'robust', got '" + s + "'");
}

struct DetectorConfig {
    double min_proj = 0.98;
    double min_norm = 0.0;   // volts
    std::size_t tau = 5;
    DetectorMode mode = DetectorMode::robust;

    void validate() const {
        if (!(min_proj > 0.0 && min_proj <= 1.0)) throw ValidationError("min_proj must lie in (0, 1]");
        if (!(min_norm >= 0.0)) throw ValidationError("min_norm must be non-negative");
        if (tau < 1) throw ValidationError("tau must be at least 1");
    }
};

struct DetectionOutcome {
    bool evaluated = false;   // false while the sample buffer warms up
    bool changed = false;
    std::optional<std::size_t> switch_index;
    std::optional<Direction> direction;
    SwitchState state;
    double max_projection = 0.0;
    double trend_norm = 0.0;
    std::vector<double> projections;   // aligned with the library in force for this sample
};

/// Precomputed libraries for every connected state under one PMU set.
class LibraryCache {
public:
    LibraryCache(const GridModel& grid, const PmuSet& pmus) {
        for (const auto& s : connected_states(grid))
            libraries_.emplace(s.mask(), std::make_shared<const SignatureLibrary>(build_library(grid, s, pmus)));
    }

    std::shared_ptr<const SignatureLibrary> find(const SwitchState& s) const {
        const auto it = libraries_.find(s.mask());
        return it == libraries_.end() ? nullptr : it->second;
    }

private:
    std::unordered_map<std::uint64_t, std::shared_ptr<const SignatureLibrary>> libraries_;
};

/// 4x the 99th percentile of |y(t) - y(t - tau)| over an event-free window.
inline double calibrate_min_norm(const std::vector<CVector>& window, std::size_t tau, double factor = 4.0,
                                 double quantile = 0.99) {
    if (tau < 1) throw ValidationError("tau must be at least 1");
    std::vector<double> norms;
    for (std::size_t t = tau; t < window.size(); ++t) norms.push_back((window[t] - window[t - tau]).norm());
    if (norms.empty()) return 0.0;
    std::sort(norms.begin(), norms.end());
    const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(norms.size())));
    return factor * norms[std::clamp<std::size_t>(rank, 1, norms.size()) - 1];
}

class TopologyDetector {
public:
    TopologyDetector(std::shared_ptr<const GridModel> grid, PmuSet pmus, DetectorConfig cfg, const SwitchState& known,
                     std::shared_ptr<const LibraryCache> cache = nullptr)
        : grid_(std::move(grid)), pmus_(std::move(pmus)), cfg_(cfg), cache_(std::move(cache)) {
        if (!grid_) throw ValidationError("detector needs a grid");
        cfg_.validate();
        reset(known);
    }

    /// Forgets all buffered samples and installs the library for `known`.
    void reset(const SwitchState& known) {
        grid_->check_state(known);
        if (!is_connected(*grid_, known)) throw ValidationError("known state " + known.to_string() + " is disconnected");
        state_ = known;
        buffer_.clear();
        candidate_.reset();
        cluster_ = 0;
        commits_ = 0;
        library_ = cache_ ? cache_->find(known) : nullptr;
        green_.reset();
        if (!library_) {
            green_ = green_matrix(*grid_, known);
            library_ = std::make_shared<const SignatureLibrary>(build_library(*grid_, *green_, pmus_));
        }
    }

    DetectionOutcome step(const CVector& y) {
        return cfg_.mode == DetectorMode::simple ? step_simple(y) : step_robust(y);
    }

    /// Trend vector between consecutive samples; commit on max projection >= min_proj.
    DetectionOutcome step_simple(const CVector& y) {
        check_sample(y);
        ++samples_;
        DetectionOutcome out;
        out.state = state_;
        if (buffer_.empty()) {
            buffer_.push_back(y);
            return out;
        }
        const CVector delta = trend_vector(y, buffer_.back());
        buffer_.clear();
        buffer_.push_back(y);
        out.evaluated = true;
        out.trend_norm = delta.norm();
        if (is_zero(delta, y) || library_->signatures.empty()) return out;
        const std::size_t best = project(delta, out);
        if (out.max_projection >= cfg_.min_proj) commit(best, y, out);
        return out;
    }

    /// Lag-tau trend vector with norm gate and candidate clustering.
    DetectionOutcome step_robust(const CVector& y) {
        check_sample(y);
        ++samples_;
        DetectionOutcome out;
        out.state = state_;
        buffer_.push_back(y);
        if (buffer_.size() > cfg_.tau + 1) buffer_.pop_front();
        if (buffer_.size() < cfg_.tau + 1) return out;
        const CVector delta = trend_vector(y, buffer_.front());
        out.evaluated = true;
        out.trend_norm = delta.norm();
        if (out.trend_norm < cfg_.min_norm || is_zero(delta, y) || library_->signatures.empty()) {
            candidate_.reset();
            cluster_ = 0;
            return out;
        }
        const std::size_t best = project(delta, out);
        if (out.max_projection > cfg_.min_proj) {
            const std::size_t sw = library_->signatures[best].switch_index;
            cluster_ = candidate_ == sw ? cluster_ + 1 : 1;
            candidate_ = sw;
            if (cluster_ == cfg_.tau) commit(best, y, out);
        }
        return out;
    }

    const SwitchState& state() const { return state_; }
    const SignatureLibrary& library() const { return *library_; }
    const PmuSet& pmus() const { return pmus_; }
    const DetectorConfig& config() const { return cfg_; }
    std::optional<std::size_t> candidate() const { return candidate_; }
    std::size_t cluster_length() const { return cluster_; }
    std::size_t buffered() const { return buffer_.size(); }
    std::size_t samples_seen() const { return samples_; }

    /// Replaces the active library without touching the buffer.
    void override_library(SignatureLibrary lib) {
        if (lib.state != state_) throw ValidationError("library state does not match detector state");
        library_ = std::make_shared<const SignatureLibrary>(std::move(lib));
        green_.reset();
    }

private:
    void check_sample(const CVector& y) const {
        if (static_cast<std::size_t>(y.size()) != pmus_.size())
            throw ValidationError("measurement has " + std::to_string(y.size()) + " entries, expected " +
                                  std::to_string(pmus_.size()));
    }

    static bool is_zero(const CVector& delta, const CVector& y) {
        return delta.norm() <= 1e-13 * std::max(1.0, y.norm());
    }

    /// Fills projections; returns the library position of the maximum (lowest index on ties).
    std::size_t project(const CVector& delta, DetectionOutcome& out) const {
        std::size_t best = 0;
        out.projections.reserve(library_->size());
        for (std::size_t k = 0; k < library_->size(); ++k) {
            const double c = projection_index(delta, library_->signatures[k]);
            out.projections.push_back(c);
            if (c > out.projections[best]) best = k;
        }
        out.max_projection = out.projections[best];
        return best;
    }

    void commit(std::size_t pos, const CVector& y, DetectionOutcome& out) {
        const Signature& sig = library_->signatures[pos];
        const std::size_t l = sig.switch_index;
        const SwitchState next = state_.flipped(l);
        if (!is_connected(*grid_, next)) throw NumericalError("library proposed a disconnecting flip");
        out.changed = true;
        out.switch_index = l;
        out.direction = sig.direction;
        out.state = next;
        refresh_library(l, next);
        state_ = next;
        buffer_.clear();
        buffer_.push_back(y);
        candidate_.reset();
        cluster_ = 0;
        ++commits_;
    }

    void refresh_library(std::size_t l, const SwitchState& next) {
        if (cache_) {
            if (auto lib = cache_->find(next)) {
                library_ = std::move(lib);
                return;
            }
        }
        if (!green_) green_ = green_matrix(*grid_, state_);
        GreenMatrix updated = rank_one_update(*grid_, *green_, l);
#ifndef NDEBUG
        if (commits_ % 4 == 0) {
            const GreenMatrix full = green_matrix(*grid_, next);
            if (inf_norm(full.matrix - updated.matrix) > 1e-8 * inf_norm(full.matrix))
                throw NumericalError("rank-one Green update drifted from full recomputation");
        }
#endif
        green_ = std::move(updated);
        library_ = std::make_shared<const SignatureLibrary>(build_library(*grid_, *green_, pmus_));
    }

    std::shared_ptr<const GridModel> grid_;
    PmuSet pmus_;
    DetectorConfig cfg_;
    std::shared_ptr<const LibraryCache> cache_;

    SwitchState state_;
    std::shared_ptr<const SignatureLibrary> library_;
    std::optional<GreenMatrix> green_;
    std::deque<CVector> buffer_;
    std::optional<std::size_t> candidate_;
    std::size_t cluster_ = 0;
    std::size_t samples_ = 0;
    std::size_t commits_ = 0;
};

/// One event-log line: {sample_index, switch, direction, max_projection, trend_norm}.
inline nlohmann::json event_json(std::size_t sample_index, const DetectionOutcome& out, const GridModel& grid) {
    return {{"sample_index", sample_index},
            {"switch", grid.switches().at(*out.switch_index).name},
            {"direction", to_string(*out.direction)},
            {"max_projection", out.max_projection},
            {"trend_norm", out.trend_norm}};
}

} // namespace topodetect
