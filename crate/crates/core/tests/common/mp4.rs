//! Minimal ISO-BMFF writer for parser tests. Produces `moov`-first files
//! with a single video track (optionally preceded by an audio track) and a
//! dummy `mdat`.

use rand::Rng;

pub fn bx(kind: &[u8; 4], body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(&((body.len() + 8) as u32).to_be_bytes());
    out.extend_from_slice(kind);
    out.extend_from_slice(body);
    out
}

pub fn full(kind: &[u8; 4], version: u8, body: &[u8]) -> Vec<u8> {
    let mut b = vec![version, 0, 0, 0];
    b.extend_from_slice(body);
    bx(kind, &b)
}

fn be32(v: &mut Vec<u8>, x: u32) {
    v.extend_from_slice(&x.to_be_bytes());
}

#[derive(Debug, Clone)]
pub struct TrackSpec {
    pub sample_entry: [u8; 4],
    pub timescale: u32,
    pub delta: u32,
    /// Frames per GOP in presentation order.
    pub gops: Vec<usize>,
    /// Maximum B-frame run; 0 means decode order equals presentation order.
    pub bframes: usize,
    pub width: u16,
    pub height: u16,
    pub audio_first: bool,
    /// Omit `stss` (every sample is a sync sample); only valid when every
    /// GOP has size 1.
    pub all_sync: bool,
}

/// What the parser should report for a built file.
#[derive(Debug, Clone, PartialEq)]
pub struct Expected {
    pub frame_pts: Vec<i64>,
    pub keyframe_indices: Vec<usize>,
}

impl TrackSpec {
    pub fn frame_count(&self) -> usize {
        self.gops.iter().sum()
    }

    /// Decode order as presentation indices. Inside each GOP the keyframe
    /// goes first, then every run of B-frames is preceded by its anchor.
    pub fn decode_order(&self) -> Vec<usize> {
        let mut order = Vec::new();
        let mut start = 0;
        for &g in &self.gops {
            order.push(start);
            let mut i = start + 1;
            let end = start + g;
            while i < end {
                let run = self.bframes.min(end - i - 1);
                let anchor = i + run;
                order.push(anchor);
                order.extend(i..anchor);
                i = anchor + 1;
            }
            start = end;
        }
        order
    }

    pub fn expected(&self) -> Expected {
        let n = self.frame_count();
        let mut keys = Vec::new();
        let mut s = 0;
        for &g in &self.gops {
            keys.push(s);
            s += g;
        }
        Expected {
            frame_pts: (0..n as i64).map(|i| i * self.delta as i64).collect(),
            keyframe_indices: keys,
        }
    }

    fn video_trak(&self) -> Vec<u8> {
        let n = self.frame_count();
        let order = self.decode_order();
        let reorder = order
            .iter()
            .enumerate()
            .map(|(d, &p)| d.saturating_sub(p))
            .max()
            .unwrap_or(0);
        // composition offsets are kept non-negative with an edit list shift
        let shift = reorder as u32 * self.delta;
        let has_ctts = order.iter().enumerate().any(|(d, &p)| d != p) || shift > 0;

        let mut stts = Vec::new();
        be32(&mut stts, 1);
        be32(&mut stts, n as u32);
        be32(&mut stts, self.delta);

        let mut ctts = Vec::new();
        be32(&mut ctts, n as u32);
        for (d, &p) in order.iter().enumerate() {
            let off = (p as i64 - d as i64) * self.delta as i64 + shift as i64;
            be32(&mut ctts, 1);
            be32(&mut ctts, off as u32);
        }

        let expected = self.expected();
        let mut stss = Vec::new();
        be32(&mut stss, expected.keyframe_indices.len() as u32);
        for (d, &p) in order.iter().enumerate() {
            if expected.keyframe_indices.binary_search(&p).is_ok() {
                be32(&mut stss, d as u32 + 1);
            }
        }

        let mut stsz = Vec::new();
        be32(&mut stsz, 0);
        be32(&mut stsz, n as u32);
        for i in 0..n {
            be32(&mut stsz, 100 + i as u32);
        }

        let mut entry = vec![0u8; 6];
        entry.extend_from_slice(&1u16.to_be_bytes());
        entry.extend_from_slice(&[0u8; 16]);
        entry.extend_from_slice(&self.width.to_be_bytes());
        entry.extend_from_slice(&self.height.to_be_bytes());
        entry.extend_from_slice(&[0u8; 50]);
        let mut stsd = Vec::new();
        be32(&mut stsd, 1);
        stsd.extend(bx(&self.sample_entry, &entry));

        let mut stsc = Vec::new();
        be32(&mut stsc, 1);
        be32(&mut stsc, 1);
        be32(&mut stsc, n as u32);
        be32(&mut stsc, 1);
        let mut stco = Vec::new();
        be32(&mut stco, 1);
        be32(&mut stco, 0);

        let mut stbl = full(b"stsd", 0, &stsd);
        stbl.extend(full(b"stts", 0, &stts));
        if has_ctts {
            stbl.extend(full(b"ctts", 0, &ctts));
        }
        if !self.all_sync {
            stbl.extend(full(b"stss", 0, &stss));
        }
        stbl.extend(full(b"stsz", 0, &stsz));
        stbl.extend(full(b"stsc", 0, &stsc));
        stbl.extend(full(b"stco", 0, &stco));

        let mut trak = full(b"tkhd", 0, &[0u8; 80]);
        if shift > 0 {
            let mut elst = Vec::new();
            be32(&mut elst, 1);
            be32(&mut elst, n as u32 * self.delta);
            be32(&mut elst, shift);
            be32(&mut elst, 0x0001_0000);
            trak.extend(bx(b"edts", &full(b"elst", 0, &elst)));
        }
        let mdia = media(self.timescale, n as u32 * self.delta, b"vide", &bx(b"stbl", &stbl));
        trak.extend(bx(b"mdia", &mdia));
        bx(b"trak", &trak)
    }

    pub fn build(&self) -> Vec<u8> {
        let mut moov = full(b"mvhd", 0, &[0u8; 96]);
        if self.audio_first {
            moov.extend(audio_trak());
        }
        moov.extend(self.video_trak());
        let mut file = bx(b"ftyp", b"isom\0\0\x02\0isomiso2avc1mp41");
        file.extend(bx(b"moov", &moov));
        file.extend(bx(b"mdat", &[0u8; 64]));
        file
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let ngops = rng.gen_range(1..=6);
        let all_sync = rng.gen_bool(0.1);
        let gops = (0..ngops)
            .map(|_| if all_sync { 1 } else { rng.gen_range(1..=12) })
            .collect();
        let entries: [&[u8; 4]; 4] = [b"avc1", b"hvc1", b"vp09", b"av01"];
        TrackSpec {
            sample_entry: *entries[rng.gen_range(0..entries.len())],
            timescale: [1000, 15360, 90000, 30000][rng.gen_range(0..4)],
            delta: rng.gen_range(1..=3000),
            gops,
            bframes: rng.gen_range(0..=3),
            width: rng.gen_range(16..=3840),
            height: rng.gen_range(16..=2160),
            audio_first: rng.gen_bool(0.5),
            all_sync,
        }
    }
}

fn media(timescale: u32, duration: u32, handler: &[u8; 4], stbl: &[u8]) -> Vec<u8> {
    let mut mdhd = vec![0u8; 8];
    mdhd.extend_from_slice(&timescale.to_be_bytes());
    mdhd.extend_from_slice(&duration.to_be_bytes());
    mdhd.extend_from_slice(&[0u8; 4]);
    let mut hdlr = vec![0u8; 4];
    hdlr.extend_from_slice(handler);
    hdlr.extend_from_slice(&[0u8; 13]);
    let mut minf = full(b"vmhd", 0, &[0u8; 8]);
    minf.extend_from_slice(stbl);
    let mut mdia = full(b"mdhd", 0, &mdhd);
    mdia.extend(full(b"hdlr", 0, &hdlr));
    mdia.extend(bx(b"minf", &minf));
    mdia
}

fn audio_trak() -> Vec<u8> {
    let mut stts = Vec::new();
    be32(&mut stts, 1);
    be32(&mut stts, 4);
    be32(&mut stts, 1024);
    let mut stsz = Vec::new();
    be32(&mut stsz, 10);
    be32(&mut stsz, 4);
    let mut stsd = Vec::new();
    be32(&mut stsd, 1);
    stsd.extend(bx(b"mp4a", &[0u8; 28]));
    let mut stbl = full(b"stsd", 0, &stsd);
    stbl.extend(full(b"stts", 0, &stts));
    stbl.extend(full(b"stsz", 0, &stsz));
    let mut trak = full(b"tkhd", 0, &[0u8; 80]);
    trak.extend(bx(b"mdia", &media(44100, 4096, b"soun", &bx(b"stbl", &stbl))));
    bx(b"trak", &trak)
}

/// One random corruption of `file`.
pub fn mutate(file: &[u8], rng: &mut impl Rng) -> Vec<u8> {
    let mut f = file.to_vec();
    if f.len() < 8 {
        f.extend((0..8).map(|_| rng.gen::<u8>()));
    }
    match rng.gen_range(0..6) {
        0 => {
            let n = rng.gen_range(0..f.len());
            f.truncate(n);
        }
        1 => {
            for _ in 0..rng.gen_range(1..=8) {
                let i = rng.gen_range(0..f.len());
                f[i] ^= 1 << rng.gen_range(0..8);
            }
        }
        2 => {
            // clobber a 32-bit field with an extreme value
            let i = rng.gen_range(0..f.len().saturating_sub(4).max(1));
            let v: u32 = [0, 1, 7, 8, 0x7fff_ffff, 0xffff_ffff, rng.gen()][rng.gen_range(0..7)];
            let end = (i + 4).min(f.len());
            f[i..end].copy_from_slice(&v.to_be_bytes()[..end - i]);
        }
        3 => {
            let i = rng.gen_range(0..=f.len());
            let junk: Vec<u8> = (0..rng.gen_range(1..32)).map(|_| rng.gen()).collect();
            f.splice(i..i, junk);
        }
        4 => {
            let a = rng.gen_range(0..f.len());
            let b = rng.gen_range(a..=f.len());
            f.drain(a..b);
        }
        _ => {
            f = (0..rng.gen_range(0..256)).map(|_| rng.gen()).collect();
        }
    }
    f
}
