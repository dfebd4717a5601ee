#pragma once

#include "rskt/decoder.hpp"
#include "rskt/harness.hpp"
#include "rskt/training.hpp"

namespace rskt {

// Bridges the model into the evaluation harness.
template <typename T>
class RsktSegmenter final : public Segmenter {
public:
    explicit RsktSegmenter(const RsktSeg<T>& model) : model_(model) {}

    ImageSample preprocess(const ImageSample& sample) const override {
        return preprocess_sample(sample, model_.model_config().input_size);
    }

    IntTensor predict(const ImageSample& sample, const ClassVocabulary& vocab) override {
        ClassVocabulary v = vocab;
        if (v.templates.empty()) v.templates = model_.model_config().templates;
        return model_.predict(sample, v);
    }

private:
    const RsktSeg<T>& model_;
};

} // namespace rskt
