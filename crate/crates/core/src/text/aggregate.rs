use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::Serialize;

use super::sentiment::SentimentScore;
use super::{Document, TextError};
use crate::county::{parse_fips, CountyId, RejectedRecord};
use crate::Matrix;

/// Average tone of one news article mentioning a county.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToneRecord {
    pub article_id: String,
    pub county: CountyId,
    /// Within [-100, 100].
    pub tone: f64,
}

fn header_index(h: &csv::StringRecord, name: &str, source_name: &str) -> Result<usize, TextError> {
    h.iter().position(|c| c.trim() == name).ok_or_else(|| TextError::Parse {
        source_name: source_name.to_string(),
        line: 1,
        reason: format!("missing column {name:?}"),
    })
}

/// Reads `id,fips,text,likes,retweets,replies`. Malformed rows are returned
/// as rejections rather than aborting the load.
pub fn read_tweets<R: Read>(
    reader: R,
    source_name: &str,
    pad_short_fips: bool,
) -> Result<(Vec<Document>, Vec<RejectedRecord>), TextError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let h = rdr.headers()?.clone();
    let idx: Vec<usize> = ["id", "fips", "text", "likes", "retweets", "replies"]
        .iter()
        .map(|c| header_index(&h, c, source_name))
        .collect::<Result<_, _>>()?;
    let mut docs = Vec::new();
    let mut rejected = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let county = match parse_fips(&rec[idx[1]], pad_short_fips) {
            Ok(c) => c,
            Err(e) => {
                rejected.push(RejectedRecord::new(source_name, line, e.to_string()));
                continue;
            }
        };
        let count = |i: usize| -> Option<u64> {
            let s = rec[idx[i]].trim();
            if s.is_empty() {
                Some(0)
            } else {
                s.parse().ok()
            }
        };
        let (Some(likes), Some(retweets), Some(replies)) = (count(3), count(4), count(5)) else {
            rejected.push(RejectedRecord::new(
                source_name,
                line,
                "engagement counts must be nonnegative integers",
            ));
            continue;
        };
        docs.push(Document {
            id: rec[idx[0]].to_string(),
            county,
            text: rec[idx[2]].to_string(),
            likes,
            retweets,
            replies,
        });
    }
    Ok((docs, rejected))
}

/// Reads `article_id,fips,tone`; tones outside [-100, 100] are rejected.
pub fn read_tones<R: Read>(
    reader: R,
    source_name: &str,
    pad_short_fips: bool,
) -> Result<(Vec<ToneRecord>, Vec<RejectedRecord>), TextError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let h = rdr.headers()?.clone();
    let idx: Vec<usize> = ["article_id", "fips", "tone"]
        .iter()
        .map(|c| header_index(&h, c, source_name))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    let mut rejected = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let county = match parse_fips(&rec[idx[1]], pad_short_fips) {
            Ok(c) => c,
            Err(e) => {
                rejected.push(RejectedRecord::new(source_name, line, e.to_string()));
                continue;
            }
        };
        match rec[idx[2]].trim().parse::<f64>() {
            Ok(t) if (-100.0..=100.0).contains(&t) => out.push(ToneRecord {
                article_id: rec[idx[0]].to_string(),
                county,
                tone: t,
            }),
            _ => rejected.push(RejectedRecord::new(
                source_name,
                line,
                format!("tone {:?} is not a number in [-100, 100]", &rec[idx[2]]),
            )),
        }
    }
    Ok((out, rejected))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountyTone {
    /// Mean tone per requested county; 0 where no article mentions it.
    pub tone: BTreeMap<CountyId, f64>,
    pub missing: BTreeSet<CountyId>,
    pub duplicates_removed: usize,
    pub out_of_range: usize,
}

/// Mean article tone per county after dropping repeated (article, county)
/// pairs. Counties without articles get the neutral tone 0 and are listed as
/// missing.
pub fn county_news_tone(records: &[ToneRecord], counties: &[CountyId]) -> CountyTone {
    let mut seen = BTreeSet::new();
    let mut sums: BTreeMap<CountyId, (f64, usize)> = BTreeMap::new();
    let mut duplicates_removed = 0;
    let mut out_of_range = 0;
    for r in records {
        if !(-100.0..=100.0).contains(&r.tone) {
            out_of_range += 1;
            continue;
        }
        if !seen.insert((r.article_id.as_str(), &r.county)) {
            duplicates_removed += 1;
            continue;
        }
        let e = sums.entry(r.county.clone()).or_insert((0.0, 0));
        e.0 += r.tone;
        e.1 += 1;
    }
    let mut tone = BTreeMap::new();
    let mut missing = BTreeSet::new();
    for c in counties {
        match sums.get(c) {
            Some(&(s, n)) => {
                tone.insert(c.clone(), s / n as f64);
            }
            None => {
                tone.insert(c.clone(), 0.0);
                missing.insert(c.clone());
            }
        }
    }
    CountyTone {
        tone,
        missing,
        duplicates_removed,
        out_of_range,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopicSentiment {
    pub counties: Vec<CountyId>,
    pub columns: Vec<String>,
    /// `counties x columns`; 0 where a county has no matching documents.
    pub values: Matrix,
    /// True where the value is the neutral default.
    pub missing: Vec<Vec<bool>>,
}

/// Engagement-weighted mean compound score per county and dominant topic.
/// `topics[i]` is document `i`'s 0-based dominant topic (`None` when
/// undefined). With `per_topic` false a single all-documents column is built.
pub fn county_topic_sentiment(
    docs: &[Document],
    topics: &[Option<usize>],
    scores: &[SentimentScore],
    n_topics: usize,
    counties: &[CountyId],
    per_topic: bool,
) -> TopicSentiment {
    let n_cols = if per_topic { n_topics } else { 1 };
    let columns = if per_topic {
        (1..=n_topics).map(|t| format!("tweet_sentiment_topic{t}")).collect()
    } else {
        vec!["tweet_sentiment".to_string()]
    };
    let row_of: BTreeMap<CountyId, usize> = counties.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
    let mut num = Matrix::zeros(counties.len(), n_cols);
    let mut den = Matrix::zeros(counties.len(), n_cols);
    for ((doc, topic), s) in docs.iter().zip(topics).zip(scores) {
        let Some(&r) = row_of.get(&doc.county) else { continue };
        let col = if per_topic {
            match topic {
                Some(t) => *t,
                None => continue,
            }
        } else {
            0
        };
        num[(r, col)] += s.engagement_weight * s.compound;
        den[(r, col)] += s.engagement_weight;
    }
    let mut missing = vec![vec![false; n_cols]; counties.len()];
    let mut values = Matrix::zeros(counties.len(), n_cols);
    for r in 0..counties.len() {
        for c in 0..n_cols {
            if den[(r, c)] > 0.0 {
                values[(r, c)] = num[(r, c)] / den[(r, c)];
            } else {
                missing[r][c] = true;
            }
        }
    }
    TopicSentiment {
        counties: counties.to_vec(),
        columns,
        values,
        missing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CountyId {
        CountyId::parse(s).unwrap()
    }

    fn tone(id: &str, county: &str, t: f64) -> ToneRecord {
        ToneRecord {
            article_id: id.into(),
            county: c(county),
            tone: t,
        }
    }

    #[test]
    fn news_tone() {
        let recs = vec![
            tone("a", "01001", 10.0),
            tone("b", "01001", -10.0),
            tone("c", "01003", 4.0),
            tone("c", "01003", 4.0),
            tone("d", "01003", 1.0),
        ];
        let t = county_news_tone(&recs, &[c("01001"), c("01003"), c("01005")]);
        assert_eq!(t.tone[&c("01001")], 0.0);
        assert_eq!(t.tone[&c("01003")], 2.5);
        assert_eq!(t.tone[&c("01005")], 0.0);
        assert!(t.missing.contains(&c("01005")));
        assert_eq!(t.duplicates_removed, 1);
    }

    #[test]
    fn rejects_out_of_range_tone() {
        let csv = "article_id,fips,tone\na,01001,5\nb,01001,150\nc,01001,x\n";
        let (recs, rej) = read_tones(csv.as_bytes(), "tones.csv", false).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(rej.len(), 2);
        assert_eq!(rej[0].line, 3);
    }

    fn doc(county: &str) -> Document {
        Document {
            id: "x".into(),
            county: c(county),
            text: String::new(),
            likes: 0,
            retweets: 0,
            replies: 0,
        }
    }

    fn score(compound: f64, w: f64) -> SentimentScore {
        SentimentScore {
            sum: 0.0,
            compound,
            engagement_weight: w,
            hits: 1,
        }
    }

    #[test]
    fn weighted_topic_sentiment() {
        let docs = vec![doc("01001"), doc("01001"), doc("01003")];
        let topics = vec![Some(1), Some(1), Some(0)];
        let scores = vec![score(0.2, 1.0), score(0.4, 3.0), score(0.33, 2.0)];
        let counties = [c("01001"), c("01003"), c("01005")];
        let ts = county_topic_sentiment(&docs, &topics, &scores, 2, &counties, true);
        assert!((ts.values[(0, 1)] - 0.35).abs() < 1e-15);
        assert!((ts.values[(1, 0)] - 0.33).abs() < 1e-15);
        assert!(ts.missing[0][0] && ts.missing[2][0] && ts.missing[2][1]);
        assert_eq!(ts.values[(2, 1)], 0.0);
        let all = county_topic_sentiment(&docs, &topics, &scores, 2, &counties, false);
        assert_eq!(all.columns, vec!["tweet_sentiment"]);
        assert!((all.values[(0, 0)] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn tweets_csv() {
        let csv = "id,fips,text,likes,retweets,replies\n1,01001,\"good, very good\",3,1,0\n2,99999,x,0,0,0\n3,01003,y,-1,0,0\n";
        let (docs, rej) = read_tweets(csv.as_bytes(), "t.csv", false).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].text, "good, very good");
        assert_eq!(rej.len(), 2);
    }
}
