#pragma once

#include "qdup/corpus.hpp"
#include "qdup/experiment.hpp"
#include "qdup/html.hpp"
#include "qdup/overlap.hpp"
#include "qdup/preprocess.hpp"
#include "qdup/question_gen.hpp"
#include "qdup/random.hpp"
#include "qdup/ranking_eval.hpp"
#include "qdup/scorer.hpp"
#include "qdup/synthetic.hpp"
#include "qdup/term_stats.hpp"
#include "qdup/text.hpp"
#include "qdup/trainset.hpp"
#include "qdup/xml_rows.hpp"
