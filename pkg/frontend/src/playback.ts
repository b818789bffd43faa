/**
 * Gapless A/B comparison between two audio renditions.
 *
 * Both sources stay loaded; toggling pauses one element, seeks the other to
 * the shared playhead and resumes, so the listening position is continuous
 * within a few milliseconds. The lowpass toggle swaps both sources for the
 * server's filtered variants while keeping the playhead.
 */

export interface AudioElementLike {
  src: string;
  currentTime: number;
  paused: boolean;
  play(): Promise<void> | void;
  pause(): void;
}

export interface AbSource {
  url: string;
  lowpassUrl: string;
}

export class AbPlayback {
  readonly players: [AudioElementLike, AudioElementLike];
  private sources: [AbSource, AbSource];
  active: 0 | 1 = 0;
  lowpass = false;

  constructor(a: AudioElementLike, b: AudioElementLike, sourceA: AbSource, sourceB: AbSource) {
    this.players = [a, b];
    this.sources = [sourceA, sourceB];
    a.src = sourceA.url;
    b.src = sourceB.url;
  }

  get playhead(): number {
    return this.players[this.active].currentTime;
  }

  async play(): Promise<void> {
    await this.players[this.active].play();
  }

  pause(): void {
    this.players[this.active].pause();
  }

  /** Switch between the two renditions at the current playhead. */
  async toggle(): Promise<void> {
    const from = this.players[this.active];
    const wasPlaying = !from.paused;
    const playhead = from.currentTime;
    from.pause();
    this.active = this.active === 0 ? 1 : 0;
    const to = this.players[this.active];
    to.currentTime = playhead;
    if (wasPlaying) await to.play();
  }

  /** Swap both players to the filtered or unfiltered variants. */
  async setLowpass(enabled: boolean): Promise<void> {
    if (enabled === this.lowpass) return;
    this.lowpass = enabled;
    const playhead = this.playhead;
    const wasPlaying = !this.players[this.active].paused;
    for (const i of [0, 1] as const) {
      this.players[i].pause();
      this.players[i].src = enabled ? this.sources[i].lowpassUrl : this.sources[i].url;
    }
    const current = this.players[this.active];
    current.currentTime = playhead;
    if (wasPlaying) await current.play();
  }
}
