#include "mcw/tune.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mcw/errors.hpp"

namespace mcw::gbdt {

namespace {

double log_uniform(SplitMix64& rng, std::pair<double, double> b) {
    return std::exp(std::log(b.first) + rng.next_unit() * (std::log(b.second) - std::log(b.first)));
}

double uniform(SplitMix64& rng, std::pair<double, double> b) {
    return b.first + rng.next_unit() * (b.second - b.first);
}

int int_uniform(SplitMix64& rng, std::pair<int, int> b) {
    return b.first + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(b.second - b.first + 1)));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double accuracy_on(const BoostedEnsemble& ens, const FeatureMatrix& fm) {
    return eval::compute_metrics(evaluate_ensemble(ens, fm)).accuracy;
}

} // namespace

bool SearchSpace::contains(const GbdtHyperParams& hp) const {
    auto in = [](double v, std::pair<double, double> b) { return v >= b.first && v <= b.second; };
    return in(hp.lambda, lambda) && in(hp.alpha, alpha) && hp.max_depth >= max_depth.first &&
           hp.max_depth <= max_depth.second && hp.n_estimators >= n_estimators.first &&
           hp.n_estimators <= n_estimators.second && in(hp.learning_rate, learning_rate) &&
           in(hp.subsample, subsample) && in(hp.colsample_bytree, colsample_bytree) &&
           in(hp.gamma, gamma) && in(hp.min_child_weight, min_child_weight) &&
           in(hp.reg_alpha, reg_alpha) && in(hp.reg_lambda, reg_lambda);
}

GbdtHyperParams sample_hyperparams(const SearchSpace& space, SplitMix64& rng) {
    GbdtHyperParams hp;
    hp.lambda = log_uniform(rng, space.lambda);
    hp.alpha = log_uniform(rng, space.alpha);
    hp.max_depth = int_uniform(rng, space.max_depth);
    hp.n_estimators = int_uniform(rng, space.n_estimators);
    hp.learning_rate = log_uniform(rng, space.learning_rate);
    hp.subsample = uniform(rng, space.subsample);
    hp.colsample_bytree = uniform(rng, space.colsample_bytree);
    hp.gamma = log_uniform(rng, space.gamma);
    hp.min_child_weight = log_uniform(rng, space.min_child_weight);
    hp.reg_alpha = log_uniform(rng, space.reg_alpha);
    hp.reg_lambda = log_uniform(rng, space.reg_lambda);
    return hp;
}

bool MedianPruner::should_prune(int checkpoint, double value) const {
    if (checkpoint == 0) return false;
    if (static_cast<std::size_t>(checkpoint) >= completed_.size()) return false;
    const auto& peers = completed_[static_cast<std::size_t>(checkpoint)];
    if (peers.empty()) return false;
    return value < median(peers);
}

void MedianPruner::record_completed_trial(const std::vector<double>& checkpoint_values) {
    if (completed_.size() < checkpoint_values.size()) completed_.resize(checkpoint_values.size());
    for (std::size_t i = 0; i < checkpoint_values.size(); ++i) {
        completed_[i].push_back(checkpoint_values[i]);
    }
}

TuneResult tune(const FeatureMatrix& train, const FeatureMatrix& val, const TuneConfig& cfg) {
    if (cfg.trials < 1) throw ConfigError("tuning needs at least one trial");
    if (cfg.checkpoints < 1) throw ConfigError("tuning needs at least one checkpoint");
    train.validate();
    val.validate();

    TuneResult result;
    MedianPruner pruner;

    for (int t = 0; t < cfg.trials; ++t) {
        SplitMix64 rng(substream_seed(cfg.seed, "trial", static_cast<std::uint64_t>(t)));
        TrialRecord rec;
        rec.id = t;
        rec.params = sample_hyperparams(cfg.space, rng);

        // evenly spaced tree-count checkpoints, the last at the full budget
        std::vector<int> marks;
        for (int j = 1; j <= cfg.checkpoints; ++j) {
            int m = static_cast<int>(std::llround(
                static_cast<double>(rec.params.n_estimators) * j / cfg.checkpoints));
            m = std::max(m, 1);
            if (marks.empty() || m > marks.back()) marks.push_back(m);
        }

        GbdtTrainer trainer(train, rec.params, substream_seed(cfg.seed, "fit", static_cast<std::uint64_t>(t)));
        std::size_t next_mark = 0;
        for (int r = 1; r <= rec.params.n_estimators && next_mark < marks.size(); ++r) {
            trainer.boost_round();
            if (r != marks[next_mark]) continue;
            double score = accuracy_on(trainer.ensemble(), val);
            rec.checkpoint_scores.push_back(score);
            int checkpoint = static_cast<int>(next_mark);
            ++next_mark;
            if (checkpoint + 1 < static_cast<int>(marks.size()) &&
                pruner.should_prune(checkpoint, score)) {
                rec.pruned = true;
                break;
            }
        }
        if (!rec.pruned) {
            rec.final_score = rec.checkpoint_scores.back();
            pruner.record_completed_trial(rec.checkpoint_scores);
            if (result.best_trial < 0 || *rec.final_score > result.best_score) {
                result.best_trial = t;
                result.best_score = *rec.final_score;
                result.best_params = rec.params;
            }
        }
        result.trials.push_back(std::move(rec));
    }
    return result;
}

std::string trials_to_csv(const std::vector<TrialRecord>& trials) {
    std::ostringstream out;
    out << "trial_id,lambda,alpha,max_depth,n_estimators,learning_rate,subsample,"
           "colsample_bytree,gamma,min_child_weight,reg_alpha,reg_lambda,"
           "checkpoint_scores,final_score,pruned\n";
    out.precision(10);
    for (const auto& t : trials) {
        const auto& p = t.params;
        out << t.id << ',' << p.lambda << ',' << p.alpha << ',' << p.max_depth << ','
            << p.n_estimators << ',' << p.learning_rate << ',' << p.subsample << ','
            << p.colsample_bytree << ',' << p.gamma << ',' << p.min_child_weight << ','
            << p.reg_alpha << ',' << p.reg_lambda << ',';
        for (std::size_t i = 0; i < t.checkpoint_scores.size(); ++i) {
            if (i > 0) out << ';';
            out << t.checkpoint_scores[i];
        }
        out << ',';
        if (t.final_score) out << *t.final_score;
        out << ',' << (t.pruned ? 1 : 0) << '\n';
    }
    return out.str();
}

} // namespace mcw::gbdt
