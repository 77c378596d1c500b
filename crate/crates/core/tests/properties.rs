use milltwin_core::control::{decide, decode_nc, encode_nc, wear_check, CommandKind, ControllerState, DecisionPolicy};
use milltwin_core::frame::{Frame, FrameDecoder, FrameError, MAX_TOPIC_LEN};
use milltwin_core::signal::{
    double_buffer, segment, BufferConfig, SampleBlock, Segmenter, SignalError, Window, WindowKind, WindowSpec,
};
use proptest::collection::vec;
use proptest::prelude::*;

const RATE: f64 = 100_000.0;

/// Cut `stream` into consecutive blocks with the given (cycled) sizes.
fn blocks_of(stream: &[f32], start: u64, sizes: &[usize]) -> Vec<SampleBlock> {
    let mut out = Vec::new();
    let mut at = 0;
    let mut i = 0;
    while at < stream.len() {
        let n = sizes[i % sizes.len()].min(stream.len() - at);
        out.push(SampleBlock::new(start + at as u64, RATE, stream[at..at + n].to_vec()).unwrap());
        at += n;
        i += 1;
    }
    out
}

/// Whole-stream session scan.
fn session_oracle(stream: &[f32], start: u64, gap: usize, threshold: f64) -> (Vec<(u64, Vec<f32>)>, Option<(u64, Vec<f32>)>) {
    let above: Vec<bool> = stream.iter().map(|&v| f64::from(v).abs() >= threshold).collect();
    let mut closed = Vec::new();
    let mut i = 0;
    while i < stream.len() {
        if !above[i] {
            i += 1;
            continue;
        }
        let open = i;
        let mut last_above = i;
        let mut j = i + 1;
        let mut closed_here = false;
        while j < stream.len() {
            if above[j] {
                last_above = j;
            } else if j - last_above == gap {
                closed_here = true;
                break;
            }
            j += 1;
        }
        let window = (start + open as u64, stream[open..=last_above].to_vec());
        if !closed_here {
            return (closed, Some(window));
        }
        closed.push(window);
        i = j + 1;
    }
    (closed, None)
}

fn stream_strategy() -> impl Strategy<Value = Vec<f32>> {
    vec(prop_oneof![3 => -0.05f32..0.05, 1 => -1.0f32..1.0], 0..600)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fixed_windows_tile_the_stream(
        stream in stream_strategy(),
        length in 1usize..80,
        sizes in vec(1usize..97, 1..6),
        start in 0u64..1_000_000,
    ) {
        let blocks = blocks_of(&stream, start, &sizes);
        let mut seg = Segmenter::new(WindowSpec::fixed(length).unwrap()).unwrap();
        let mut out = Vec::new();
        for b in &blocks {
            seg.push(b, 0, &mut out).unwrap();
        }
        prop_assert_eq!(out.len(), stream.len() / length);
        let tail = seg.flush(0);
        out.extend(tail);
        let mut rebuilt = Vec::new();
        let mut next = start;
        for w in &out {
            prop_assert_eq!(w.kind(), WindowKind::Fixed);
            prop_assert_eq!(w.start_index(), next);
            prop_assert!(w.len() <= length);
            next += w.len() as u64;
            rebuilt.extend_from_slice(w.samples());
        }
        prop_assert_eq!(rebuilt, stream);
    }

    #[test]
    fn sliding_windows_match_direct_slicing(
        stream in stream_strategy(),
        length in 1usize..80,
        hop_frac in 0.0f64..1.0,
        sizes in vec(1usize..97, 1..6),
    ) {
        let hop = 1 + ((length - 1) as f64 * hop_frac) as usize;
        let blocks = blocks_of(&stream, 0, &sizes);
        let windows = segment(&blocks, WindowSpec::sliding(length, hop).unwrap()).unwrap();
        let expected = if stream.len() >= length { (stream.len() - length) / hop + 1 } else { 0 };
        prop_assert_eq!(windows.len(), expected);
        for (k, w) in windows.iter().enumerate() {
            prop_assert_eq!(w.start_index(), (k * hop) as u64);
            prop_assert_eq!(w.samples(), &stream[k * hop..k * hop + length]);
        }
        // every sample up to the last window end is covered
        // ceil(length / hop) or floor(length / hop) times in the interior
        if let (Some(first), Some(last)) = (windows.first(), windows.last()) {
            let end = last.start_index() as usize + length;
            let mut cover = vec![0usize; end];
            for w in &windows {
                for c in &mut cover[w.start_index() as usize..w.start_index() as usize + length] {
                    *c += 1;
                }
            }
            prop_assert_eq!(first.start_index(), 0);
            if windows.len() > length.div_ceil(hop) {
                for &c in &cover[length..end - length] {
                    prop_assert!(c == length / hop || c == length.div_ceil(hop), "coverage {c}");
                }
            }
        }
    }

    #[test]
    fn sessions_match_whole_stream_scan(
        stream in stream_strategy(),
        gap in 1usize..40,
        threshold in 0.02f64..0.6,
        sizes in vec(1usize..97, 1..6),
        start in 0u64..1_000,
    ) {
        let blocks = blocks_of(&stream, start, &sizes);
        let mut seg = Segmenter::new(WindowSpec::session(gap, threshold).unwrap()).unwrap();
        let mut out: Vec<Window> = Vec::new();
        for b in &blocks {
            seg.push(b, 0, &mut out).unwrap();
        }
        let (closed, open) = session_oracle(&stream, start, gap, threshold);
        prop_assert_eq!(out.len(), closed.len());
        for (w, (s, samples)) in out.iter().zip(&closed) {
            prop_assert_eq!(w.start_index(), *s);
            prop_assert_eq!(w.samples(), &samples[..]);
            // opens and ends on an active sample; no interior gap reaches the timeout
            prop_assert!(f64::from(w.samples()[0]).abs() >= threshold);
            prop_assert!(f64::from(*w.samples().last().unwrap()).abs() >= threshold);
            let mut run = 0;
            for &v in w.samples() {
                run = if f64::from(v).abs() >= threshold { 0 } else { run + 1 };
                prop_assert!(run < gap);
            }
        }
        let flushed = seg.flush(0);
        prop_assert_eq!(flushed.map(|w| (w.start_index(), w.samples().to_vec())), open);
    }

    #[test]
    fn segmentation_rejects_gaps_and_rate_changes(
        length in 1usize..50,
        first in 1usize..60,
        skip in 1u64..10,
    ) {
        let mut seg = Segmenter::new(WindowSpec::fixed(length).unwrap()).unwrap();
        let mut out = Vec::new();
        let a = SampleBlock::new(10, RATE, vec![0.0; first]).unwrap();
        seg.push(&a, 0, &mut out).unwrap();
        let gapped = SampleBlock::new(a.end_index() + skip, RATE, vec![0.0; 3]).unwrap();
        prop_assert_eq!(
            seg.push(&gapped, 0, &mut out),
            Err(SignalError::Discontinuity { expected: a.end_index(), actual: a.end_index() + skip })
        );
        let other_rate = SampleBlock::new(a.end_index(), RATE / 2.0, vec![0.0; 3]).unwrap();
        let mismatch = matches!(seg.push(&other_rate, 0, &mut out), Err(SignalError::SampleRateMismatch { .. }));
        prop_assert!(mismatch);
        let ok = SampleBlock::new(a.end_index(), RATE, vec![0.0; 3]).unwrap();
        prop_assert!(seg.push(&ok, 0, &mut out).is_ok());
    }

    #[test]
    fn double_buffer_preserves_the_stream(
        stream in vec(-1.0f32..1.0, 1..2_000),
        capacity in 1usize..300,
        size_seed in vec(1usize..300, 1..8),
    ) {
        let sizes: Vec<usize> = size_seed.iter().map(|&s| 1 + s % capacity).collect();
        let (mut tx, mut rx) = double_buffer(BufferConfig::lossless(capacity, RATE)).unwrap();
        let mut rebuilt = Vec::new();
        let mut next = 500u64;
        let take = |rx: &mut milltwin_core::signal::Consumer, rebuilt: &mut Vec<f32>, next: &mut u64| {
            while let Some(b) = rx.drain() {
                assert_eq!(b.start_index(), *next);
                *next = b.end_index();
                rebuilt.extend_from_slice(b.samples());
            }
        };
        for b in blocks_of(&stream, 500, &sizes) {
            let r = tx.push_block(&b).unwrap();
            prop_assert_eq!(r.dropped, 0);
            take(&mut rx, &mut rebuilt, &mut next);
        }
        tx.finish();
        take(&mut rx, &mut rebuilt, &mut next);
        prop_assert!(rx.is_exhausted());
        prop_assert_eq!(rx.dropped_samples(), 0);
        prop_assert_eq!(rebuilt, stream);
    }
}

/// History-based reference: belief flips at window `i` exactly when the last
/// `d` classifications all disagree with the belief held before `i`.
fn debounce_oracle(classes: &[bool], d: usize) -> Vec<Option<bool>> {
    let mut belief = false;
    let mut last_flip = 0usize;
    let mut out = Vec::new();
    for i in 0..classes.len() {
        let since = i + 1 - last_flip;
        let flip = since >= d && classes[i + 1 - d..=i].iter().all(|&c| c != belief);
        if flip {
            belief = !belief;
            last_flip = i + 1;
            out.push(Some(belief));
        } else {
            out.push(None);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn debounce_matches_reference(
        probs in vec(0.0f64..1.0, 0..200),
        d in 1u32..6,
        threshold in 0.05f64..0.95,
    ) {
        let policy = DecisionPolicy {
            contact_probability_threshold: threshold,
            debounce_windows: d,
            ..DecisionPolicy::default()
        };
        let classes: Vec<bool> = probs.iter().map(|&p| p >= threshold).collect();
        let expected = debounce_oracle(&classes, d as usize);
        let mut state = ControllerState::default();
        let mut kinds = Vec::new();
        for (i, &p) in probs.iter().enumerate() {
            let (next, cmd) = decide(&state, p, &policy, i as u64);
            let want = expected[i].map(|c| if c { policy.contact_action } else { policy.restore_action });
            prop_assert_eq!(cmd.map(|c| c.kind), want);
            if let Some(c) = cmd {
                prop_assert_eq!(c.issue_timestamp_ns, i as u64);
                kinds.push(c.kind);
            }
            state = next;
        }
        // commands alternate, starting with the contact action
        for (i, k) in kinds.iter().enumerate() {
            let want = if i % 2 == 0 { policy.contact_action } else { policy.restore_action };
            prop_assert_eq!(*k, want);
        }
        if d == 1 {
            let changes = classes.iter().fold((false, 0), |(prev, n), &c| (c, n + usize::from(c != prev))).1;
            prop_assert_eq!(kinds.len(), changes);
        }
    }

    #[test]
    fn tool_change_issued_once_per_tool(wear in vec(0.0f64..1.0, 1..100)) {
        let policy = DecisionPolicy::default();
        let mut state = ControllerState::default();
        let mut issued = 0;
        for (i, &w) in wear.iter().enumerate() {
            let (next, cmd) = wear_check(&state, w, &policy, i as u64);
            if let Some(c) = cmd {
                prop_assert_eq!(c.kind, CommandKind::ToolChange);
                prop_assert!(w > 0.8);
                issued += 1;
            }
            state = next;
        }
        prop_assert_eq!(issued, usize::from(wear.iter().any(|&w| w > 0.8)));
    }

    #[test]
    fn nc_roundtrip_is_exact(
        feed in prop_oneof![Just(0.0), 0.0f64..1e6, any::<f64>().prop_filter("finite nonnegative", |v| v.is_finite() && v.is_sign_positive())],
        speed in any::<f64>().prop_filter("finite positive", |v| v.is_finite() && *v > 0.0),
    ) {
        for kind in [
            CommandKind::SetFeedRate(feed),
            CommandKind::SetSpindleSpeed(speed),
            CommandKind::Halt,
            CommandKind::Resume,
            CommandKind::ToolChange,
        ] {
            let back = decode_nc(&encode_nc(&kind)).unwrap();
            match (kind, back) {
                (CommandKind::SetFeedRate(a), CommandKind::SetFeedRate(b))
                | (CommandKind::SetSpindleSpeed(a), CommandKind::SetSpindleSpeed(b)) => {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
                _ => prop_assert_eq!(kind, back),
            }
        }
    }

    #[test]
    fn nc_decoder_never_panics(line in ".{0,24}") {
        let _ = decode_nc(&line);
    }

    #[test]
    fn negative_feed_is_out_of_range(v in any::<f64>().prop_filter("finite", |v| v.is_finite() && v.is_sign_negative())) {
        let text = encode_nc(&CommandKind::SetFeedRate(v));
        let out_of_range = matches!(decode_nc(&text), Err(milltwin_core::control::NcError::OutOfRange(_)));
        prop_assert!(out_of_range);
    }
}

fn frame_strategy() -> impl Strategy<Value = Frame> {
    (
        "[a-z$/_]{1,40}|\\PC{1,60}",
        any::<u64>(),
        vec(any::<u8>(), 0..512),
    )
        .prop_filter_map("topic fits", |(topic, ts, payload)| Frame::new(topic, ts, payload).ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn frame_roundtrip(frame in frame_strategy()) {
        let bytes = frame.encode();
        prop_assert_eq!(bytes.len(), frame.encoded_len());
        let (back, used) = Frame::decode(&bytes).unwrap().unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(&back, &frame);
        // every strict prefix asks for more bytes
        for cut in [0, 1, 4, 6, bytes.len() / 2, bytes.len() - 1] {
            prop_assert_eq!(Frame::decode(&bytes[..cut]).unwrap(), None);
        }
    }

    #[test]
    fn stream_decoder_reassembles_arbitrary_chunking(
        frames in vec(frame_strategy(), 1..8),
        chunk in 1usize..64,
    ) {
        let mut wire = Vec::new();
        for f in &frames {
            f.encode_into(&mut wire);
        }
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        for piece in wire.chunks(chunk) {
            dec.feed(piece);
            while let Some(f) = dec.next_frame().unwrap() {
                got.push(f);
            }
        }
        prop_assert_eq!(got, frames);
        prop_assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn random_bytes_only_produce_errors(bytes in vec(any::<u8>(), 0..300)) {
        match Frame::decode(&bytes) {
            Ok(Some((f, used))) => prop_assert_eq!(&f.encode()[..], &bytes[..used]),
            Ok(None) | Err(_) => {}
        }
        let mut dec = FrameDecoder::new();
        dec.feed(&bytes);
        let _ = dec.next_frame();
    }

    #[test]
    fn mutated_frames_decode_or_fail_cleanly(
        frame in frame_strategy(),
        flips in vec((any::<prop::sample::Index>(), any::<u8>()), 1..6),
    ) {
        let mut bytes = frame.encode();
        for (at, v) in flips {
            let i = at.index(bytes.len());
            bytes[i] = v;
        }
        match Frame::decode(&bytes) {
            Ok(Some((f, used))) => {
                prop_assert!(f.topic.len() <= MAX_TOPIC_LEN);
                prop_assert_eq!(&f.encode()[..], &bytes[..used]);
            }
            Ok(None) => {}
            Err(e) => {
                let known = matches!(
                    e,
                    FrameError::BadMagic(_)
                        | FrameError::BadVersion(_)
                        | FrameError::BadTopicLength(_)
                        | FrameError::BadTopicEncoding
                        | FrameError::PayloadTooLarge(_)
                );
                prop_assert!(known);
            }
        }
    }
}

#[test]
fn session_example_excludes_gap_tail() {
    let stream: Vec<f32> = [0.0, 0.5, 0.0, 0.6, 0.0, 0.0, 0.0, 0.7]
        .into_iter()
        .collect();
    let blocks = blocks_of(&stream, 0, &[3]);
    let windows = segment(&blocks, WindowSpec::session(3, 0.4).unwrap()).unwrap();
    assert_eq!(windows.len(), 1);
    assert_eq!(windows[0].start_index(), 1);
    assert_eq!(windows[0].samples(), &[0.5, 0.0, 0.6]);
}
